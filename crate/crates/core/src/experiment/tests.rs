use super::*;

fn spec(protocol: Protocol, n: usize) -> ExperimentSpec {
    ExperimentSpec::new(protocol, n)
}

#[test]
fn complete_graph_report() {
    let mut s = spec(Protocol::CheckGraph, 8);
    s.family = Family::Complete;
    let r = run(&s).unwrap();
    let l2 = r.seeds[0].details["lambda2"].as_f64().unwrap();
    assert!((l2 - 8.0 / 7.0).abs() <= 1e-8);
}

#[test]
fn fault_free_llb_passes_every_verdict() {
    let mut s = spec(Protocol::Llb, 40);
    s.family = Family::Regular;
    s.degree = Some(10);
    s.seeds = Some("1..=10".parse().unwrap());
    let r = run(&s).unwrap();
    assert_eq!(r.seeds.len(), 10);
    assert!(r.seeds.iter().all(|x| x.verdicts.iter().all(|v| v.passed)));
    assert!(!r.hard_violation());
}

#[test]
fn csv_is_deterministic_and_versioned() {
    let mut s = spec(Protocol::Count, 64);
    s.c2 = Some(4.0);
    s.t = 2;
    s.adversary.strategy = Strategy::CrashRandom;
    s.seeds = Some("0..3".parse().unwrap());
    let a = run(&s).unwrap().to_csv(true).unwrap();
    let b = run(&s).unwrap().to_csv(true).unwrap();
    assert_eq!(a, b);
    let mut lines = a.lines();
    assert!(lines.next().unwrap().starts_with(&format!("# ftllb experiment csv v{CSV_VERSION}")));
    assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
    assert_eq!(lines.count(), 3);
}

#[test]
fn theory_preset_refuses_with_explanation() {
    let mut s = spec(Protocol::ConsensusCrash, 128);
    s.preset = Preset::Theory;
    match run(&s) {
        Err(Error::Config(msg)) => assert!(msg.contains("theory preset")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn config_files_parse() {
    let toml = r#"
        mode = "crash"
        n = 64
        t = 3
        C1 = 2.0
        C2 = 4.0
        seed = 7
        adversary = { strategy = "crash:eclipse" }
    "#;
    let s = ExperimentSpec::from_toml(toml).unwrap();
    assert_eq!(s.protocol, Protocol::ConsensusCrash);
    assert_eq!(s.constants(), (2.0, 4.0));
    assert_eq!(s.seed_range(), SeedRange::single(7));
    assert_eq!(s.adversary.strategy, Strategy::CrashEclipse);
    let json = r#"{"protocol": "llb", "n": 10, "seeds": "3..5", "inputs": {"unanimous": 1}}"#;
    let s = ExperimentSpec::from_json(json).unwrap();
    assert_eq!(s.seed_range().len(), 2);
    assert_eq!(s.inputs, Inputs::Unanimous(1));
    assert!(ExperimentSpec::from_json(r#"{"protocol": "llb", "n": 10, "bogus": 1}"#).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(Protocol::Llb, 10);
    s.seeds = Some(SeedRange { start: 4, end: 4 });
    assert!(s.validate().is_err());
    let mut s = spec(Protocol::Llb, 10);
    s.t = 10;
    assert!(s.validate().is_err());
    let mut s = spec(Protocol::ConsensusCrash, 64);
    s.adversary.strategy = Strategy::RandomDrops;
    assert!(s.validate().is_err());
}

#[test]
fn replay_matches_the_run_and_filters() {
    let dir = std::env::temp_dir().join(format!("ftllb-replay-{}", std::process::id()));
    let mut s = spec(Protocol::Llb, 48);
    s.c2 = Some(4.0);
    s.t = 3;
    s.adversary.strategy = Strategy::CrashRandom;
    s.seed = Some(5);
    s.trace_dir = Some(dir.clone());
    let r = run(&s).unwrap();
    let path = dir.join("llb-seed5.jsonl");
    let back = replay(&path, None).unwrap();
    assert_eq!(back.verdicts, r.seeds[0].verdicts);
    let only = replay(&path, Some(&["value_range".to_string()])).unwrap();
    assert_eq!(only.verdicts.len(), 1);
    assert_eq!(only.verdicts[0].lemma, "value_range");

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen("\"round\":4", "\"round\":9", 1);
    let bad = dir.join("edited.jsonl");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    match replay(&bad, None) {
        Err(Error::Trace { line, .. }) => assert_eq!(line, 5),
        other => panic!("unexpected {other:?}"),
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn consensus_rows_carry_outcomes() {
    let mut s = spec(Protocol::ConsensusCrash, 48);
    s.c2 = Some(4.0);
    s.c1 = Some(1.0);
    s.inputs = Inputs::Unanimous(1);
    s.t = 4;
    s.adversary.strategy = Strategy::CrashRandom;
    let r = run(&s).unwrap();
    let row = &r.seeds[0].row;
    assert!(row.agreed && row.valid);
    assert_eq!(row.decided_value, Some(1));
    assert_eq!(row.bits, row.messages * crate::simnet::MESSAGE_BITS);
}
