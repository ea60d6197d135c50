use std::sync::OnceLock;

use cfmargin::io::{
    canonicalize_episode, parse_commonroad, parse_episode, parse_native, write_episode, write_scenario,
};
use cfmargin::suite::{generate_suite, stop_sign_fixture, SuiteConfig, SuiteEpisode};
use proptest::prelude::*;

const COMMONROAD: &str = r#"<?xml version="1.0"?>
<commonRoad benchmarkID="F_1" timeStepSize="0.1">
  <lanelet id="10">
    <leftBound><point><x>0</x><y>2</y></point><point><x>50</x><y>2</y></point></leftBound>
    <rightBound><point><x>0</x><y>-2</y></point><point><x>50</x><y>-2</y></point></rightBound>
    <successor ref="11"/>
  </lanelet>
  <lanelet id="11">
    <leftBound><point><x>50</x><y>2</y></point><point><x>90</x><y>12</y></point></leftBound>
    <rightBound><point><x>50</x><y>-2</y></point><point><x>92</x><y>8</y></point></rightBound>
  </lanelet>
  <obstacle id="7">
    <role>dynamic</role>
    <shape><rectangle><length>4.5</length><width>1.8</width></rectangle></shape>
    <initialState>
      <position><point><x>5</x><y>0</y></point></position>
      <orientation><exact>0</exact></orientation>
      <velocity><exact>9</exact></velocity>
    </initialState>
  </obstacle>
</commonRoad>"#;

fn suite() -> &'static [SuiteEpisode] {
    static S: OnceLock<Vec<SuiteEpisode>> = OnceLock::new();
    S.get_or_init(|| {
        generate_suite(&SuiteConfig {
            seed: 5,
            per_band: 3,
            ..SuiteConfig::default()
        })
    })
}

fn samples() -> Vec<Vec<u8>> {
    let s = stop_sign_fixture(9.0, 2.5);
    vec![
        write_scenario(&s).into_bytes(),
        write_episode(&suite()[0].episode),
        COMMONROAD.as_bytes().to_vec(),
    ]
}

#[derive(Debug, Clone)]
enum Mutation {
    Flip(usize, u8),
    Truncate(usize),
    DropLine(usize),
    Duplicate(usize),
    Splice(usize, Vec<u8>),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (any::<usize>(), any::<u8>()).prop_map(|(i, b)| Mutation::Flip(i, b)),
        any::<usize>().prop_map(Mutation::Truncate),
        any::<usize>().prop_map(Mutation::DropLine),
        any::<usize>().prop_map(Mutation::Duplicate),
        (
            any::<usize>(),
            prop::sample::select(vec![
                b"nan".to_vec(),
                b"inf".to_vec(),
                b"-1".to_vec(),
                b"1e308".to_vec(),
                b"\n".to_vec(),
                b"=".to_vec(),
                b"<".to_vec(),
                b";".to_vec(),
                b" ".to_vec(),
                b"99999999999999999999".to_vec(),
                "\u{00e9}".as_bytes().to_vec(),
                vec![0xff, 0xfe],
            ])
        )
            .prop_map(|(i, b)| Mutation::Splice(i, b)),
    ]
}

fn apply(mut bytes: Vec<u8>, m: &Mutation) -> Vec<u8> {
    let at = |i: usize, n: usize| if n == 0 { 0 } else { i % n };
    match m {
        Mutation::Flip(i, b) => {
            if !bytes.is_empty() {
                let k = at(*i, bytes.len());
                bytes[k] = *b;
            }
            bytes
        }
        Mutation::Truncate(i) => {
            bytes.truncate(at(*i, bytes.len() + 1));
            bytes
        }
        Mutation::DropLine(i) | Mutation::Duplicate(i) => {
            let mut lines: Vec<Vec<u8>> = bytes.split(|&c| c == b'\n').map(<[u8]>::to_vec).collect();
            let k = at(*i, lines.len());
            if matches!(m, Mutation::DropLine(_)) {
                lines.remove(k);
            } else {
                let l = lines[k].clone();
                lines.insert(k, l);
            }
            lines.join(&b'\n')
        }
        Mutation::Splice(i, ins) => {
            let k = at(*i, bytes.len() + 1);
            bytes.splice(k..k, ins.iter().copied());
            bytes
        }
    }
}

fn parse_all(bytes: &[u8]) {
    let _ = parse_native(bytes);
    let _ = parse_episode(bytes);
    let _ = parse_commonroad(bytes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn random_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        parse_all(&bytes);
    }

    #[test]
    fn mutated_files_never_panic(which in 0usize..3, ms in prop::collection::vec(mutation(), 1..6)) {
        let mut bytes = samples().swap_remove(which);
        for m in &ms {
            bytes = apply(bytes, m);
        }
        parse_all(&bytes);
    }

    #[test]
    fn mutated_scenarios_that_parse_still_round_trip(ms in prop::collection::vec(mutation(), 1..4)) {
        let mut bytes = samples().swap_remove(0);
        for m in &ms {
            bytes = apply(bytes, m);
        }
        if let Ok(s) = parse_native(&bytes) {
            let again = parse_native(write_scenario(&s).as_bytes()).unwrap();
            prop_assert_eq!(write_scenario(&again), write_scenario(&s));
        }
    }
}

#[test]
fn valid_samples_parse() {
    let s = samples();
    parse_native(&s[0]).unwrap();
    parse_episode(&s[1]).unwrap();
    let cr = parse_commonroad(&s[2]).unwrap();
    assert_eq!(cr.scenario.agents[0].route, vec![10, 11]);
}

#[test]
fn suite_scenarios_round_trip() {
    for e in suite() {
        let text = write_scenario(&e.scenario);
        let back = parse_native(text.as_bytes()).unwrap();
        assert_eq!(write_scenario(&back), text, "{}", e.scenario.name);
        // Written at nine significant digits.
        for (a, b) in back.agents.iter().zip(&e.scenario.agents) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.route, b.route);
            let d = a.initial.position - b.initial.position;
            assert!(d.x.abs() < 1e-6 && d.y.abs() < 1e-6);
            assert!((a.initial.speed - b.initial.speed).abs() < 1e-6);
        }
    }
}

#[test]
fn suite_episodes_round_trip_to_canonical_form() {
    for e in suite() {
        let bytes = write_episode(&e.episode);
        let back = parse_episode(&bytes).unwrap();
        assert_eq!(back, canonicalize_episode(&e.episode));
        assert_eq!(write_episode(&back), bytes);
    }
}

#[test]
fn commonroad_conversion_survives_native_round_trip() {
    let s = parse_commonroad(COMMONROAD.as_bytes()).unwrap().scenario;
    let back = parse_native(write_scenario(&s).as_bytes()).unwrap();
    assert_eq!(write_scenario(&back), write_scenario(&s));
}
