use borderwatch_core::sim::{
    self, ActionCommand, FaultKind, FaultSpec, IntruderInterval, NodeSpec, OperatorAction, OperatorSpec,
    ScenarioScript, Simulation,
};
use borderwatch_core::store::{EventLog, Query};

fn crossing(node: &str, enter_ms: u64, exit_ms: u64, distance_cm: f64) -> IntruderInterval {
    IntruderInterval { node_id: node.into(), enter_ms, exit_ms, distance_cm }
}

fn one_node(intruders: Vec<IntruderInterval>) -> ScenarioScript {
    ScenarioScript {
        duration_ms: 20_000,
        tick_ms: 100,
        nodes: vec![NodeSpec::new("gate-4")],
        operators: vec![OperatorSpec { id: "op-1".into(), subscribe: vec!["*".into()] }],
        intruders,
        faults: vec![],
        operator_actions: vec![],
        template: None,
    }
}

#[test]
fn single_crossing_is_stored_and_delivered_once() {
    // Hand trace: obstacle at 15 cm reads round(13/28*823) = 382 < 824 on
    // ticks 10000..=11900. First blocked tick raises seq 1 and disarms; the
    // path never stays clear for the 1 s re-arm hold before the run ends
    // with the node disarmed, so no second notify.
    let report = sim::run(&one_node(vec![crossing("gate-4", 10_000, 12_000, 15.0)]), 1).unwrap();
    assert_eq!(report.stored_events, 1);
    assert_eq!(report.total_delivered(), 1);
    assert_eq!(report.nodes[0].detection_ticks, 20);
    assert_eq!(report.nodes[0].notifications_generated, 1);
    assert_eq!(report.notification_latency_ticks, vec![0]);
}

#[test]
fn no_intruders_no_events() {
    let report = sim::run(&one_node(vec![]), 1).unwrap();
    assert_eq!(report.stored_events, 0);
    assert_eq!(report.total_delivered(), 0);
    assert_eq!(report.nodes[0].final_phase, borderwatch_core::Phase::Online);
}

#[test]
fn out_of_range_intruder_is_invisible() {
    let report = sim::run(&one_node(vec![crossing("gate-4", 1000, 5000, 31.0)]), 1).unwrap();
    assert_eq!(report.stored_events, 0);
}

#[test]
fn lossy_uplink_stores_exactly_once() {
    let mut script = one_node(vec![crossing("gate-4", 10_000, 12_000, 15.0)]);
    script.faults.push(FaultSpec {
        node_id: "gate-4".into(),
        kind: FaultKind::DropUplinkPct,
        from_ms: 0,
        to_ms: 20_000,
        pct: 30.0,
    });
    let mut retransmitted = 0;
    for seed in 0..50 {
        let report = sim::run(&script, seed).unwrap();
        assert_eq!(report.stored_events, 1, "seed {seed}");
        assert_eq!(report.total_delivered(), 1, "seed {seed}");
        retransmitted += report.nodes[0].retransmissions;
    }
    assert!(retransmitted > 0, "30% loss should force some retransmissions");
}

#[test]
fn operator_command_reaches_node() {
    let mut script = one_node(vec![crossing("gate-4", 10_000, 12_000, 15.0)]);
    script.operator_actions.push(OperatorAction {
        at_ms: 10_500,
        operator_id: None,
        command: ActionCommand { device_id: "gate-4".into(), pin: "V1".into(), value: 1 },
    });
    let mut s = Simulation::new(script, 3).unwrap();
    while s.now() < 10_500 {
        s.step();
        assert!(!s.node("gate-4").unwrap().alarm_on());
    }
    s.step();
    assert!(s.node("gate-4").unwrap().alarm_on());
    s.run_to_end();
    let report = s.report();
    let cmd = &report.commands[0];
    assert_eq!(cmd.delivered, Some(true));
    assert_eq!(cmd.applied_latency_ticks, Some(0));
    assert!(report.nodes[0].alarm_on);
}

#[test]
fn command_to_offline_and_unknown_devices() {
    let mut script = one_node(vec![]);
    script.faults.push(FaultSpec { node_id: "gate-4".into(), kind: FaultKind::DropLink, from_ms: 1000, to_ms: 3000, pct: 0.0 });
    for (at_ms, device) in [(2000, "gate-4"), (2000, "ghost")] {
        script.operator_actions.push(OperatorAction {
            at_ms,
            operator_id: None,
            command: ActionCommand { device_id: device.into(), pin: "V1".into(), value: 1 },
        });
    }
    let report = sim::run(&script, 0).unwrap();
    assert_eq!(report.commands[0].delivered, Some(false));
    assert_eq!(report.commands[1].error.as_deref(), Some("no_such_device"));
    assert!(!report.nodes[0].alarm_on);
}

#[test]
fn link_outage_events_are_stored_after_recovery() {
    let mut script = one_node(vec![
        crossing("gate-4", 3000, 3500, 10.0),
        crossing("gate-4", 9000, 9500, 10.0),
        crossing("gate-4", 15_000, 15_500, 10.0),
    ]);
    script.duration_ms = 40_000;
    script.faults.push(FaultSpec { node_id: "gate-4".into(), kind: FaultKind::DropLink, from_ms: 2000, to_ms: 20_000, pct: 0.0 });
    let mut s = Simulation::new(script, 9).unwrap();
    while s.now() < 20_000 {
        s.step();
    }
    assert_eq!(s.relay().store().query(&Query::all()).len(), 0);
    s.run_to_end();
    let stored = s.relay().store().query(&Query::all());
    assert_eq!(stored.iter().map(|e| e.device_seq).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(stored.iter().all(|e| e.server_ts_ms >= 20_000));
    assert_eq!(s.report().total_delivered(), 3);
}

#[test]
fn every_stored_event_is_one_arming_cycle_of_one_node() {
    let mut script = one_node(vec![]);
    script.duration_ms = 60_000;
    script.nodes.push(NodeSpec::new("tower-1"));
    script.operators.push(OperatorSpec { id: "op-2".into(), subscribe: vec!["tower-*".into()] });
    for k in 0..5u64 {
        script.intruders.push(crossing("gate-4", 1000 + k * 10_000, 2000 + k * 10_000, 5.0 + k as f64));
        script.intruders.push(crossing("tower-1", 4000 + k * 11_000, 4300 + k * 11_000, 25.0));
    }
    let report = sim::run(&script, 4).unwrap();
    for n in &report.nodes {
        assert_eq!(n.notifications_generated, 5);
        assert_eq!(n.stored_events, 5);
    }
    assert_eq!(report.stored_events, 10);
    assert_eq!(report.operators[0].delivered, 10);
    assert_eq!(report.operators[1].delivered, 5);
    assert!(report.operators.iter().all(|o| o.duplicate_deliveries == 0 && o.out_of_order_deliveries == 0));
}

#[test]
fn identical_inputs_give_identical_reports() {
    let mut script = one_node(vec![crossing("gate-4", 2000, 2600, 12.0), crossing("gate-4", 8000, 9000, 20.0)]);
    script.nodes[0].sensor.noise_amplitude = 50;
    script.faults.push(FaultSpec { node_id: "gate-4".into(), kind: FaultKind::DropUplinkPct, from_ms: 0, to_ms: 20_000, pct: 40.0 });
    let a = sim::run(&script, 11).unwrap().to_json_pretty();
    let b = sim::run(&script, 11).unwrap().to_json_pretty();
    assert_eq!(a, b);
}

#[test]
fn validation_lists_each_violation() {
    assert!(sim::validate(&one_node(vec![])).is_ok());

    let mut script = one_node(vec![crossing("gate-4", 5000, 4000, 10.0)]);
    script.faults.push(FaultSpec { node_id: "gate-4".into(), kind: FaultKind::DropUplinkPct, from_ms: 0, to_ms: 10, pct: 130.0 });
    script.intruders.push(crossing("nobody", 0, 10, 10.0));
    script.tick_ms = 0;
    let v = sim::validate(&script).unwrap_err();
    let text: Vec<String> = v.iter().map(|v| v.to_string()).collect();
    assert!(text.contains(&"intruders[0]: exit_ms < enter_ms".to_string()), "{text:?}");
    assert!(text.contains(&"faults[0]: pct must be within [0, 100]".to_string()), "{text:?}");
    assert!(text.contains(&"intruders[1]: unknown node_id".to_string()), "{text:?}");
    assert!(text.contains(&"tick_ms: must be positive".to_string()), "{text:?}");
    assert!(Simulation::new(script, 0).is_err());
}

#[test]
fn script_json_round_trip_with_defaults() {
    let json = r#"{
        "duration_ms": 20000,
        "nodes": [{"id": "gate-4"}],
        "intruders": [{"node_id": "gate-4", "enter_ms": 10000, "exit_ms": 12000, "distance_cm": 15}]
    }"#;
    let script = ScenarioScript::from_json(json).unwrap();
    assert_eq!(script.tick_ms, 100);
    assert_eq!(script.operators.len(), 1);
    assert_eq!(script.nodes[0].config.sample_period_ms, 100);
    assert_eq!(ScenarioScript::from_json(&script.to_json_pretty()).unwrap(), script);
    assert!(ScenarioScript::from_json(r#"{"duration_ms": 1, "nodes": [], "bogus": 1}"#).is_err());
}
