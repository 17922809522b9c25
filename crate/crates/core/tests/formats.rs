use proptest::prelude::*;
use t2d_core::formats::*;
use t2d_core::pipeline::DiarSegment;
use t2d_core::Error;

const TWO: &str = "SPEAKER rec1 1 0.50 1.25 <NA> <NA> alice <NA> <NA>\nSPEAKER rec1 1 2.00 0.75 <NA> <NA> bob <NA> <NA>\n";

#[test]
fn durations_are_durations() {
    let l = parse_rttm(TWO, "two.rttm").unwrap();
    assert_eq!(l[0].segment, DiarSegment { speaker: "alice".into(), start: 0.5, end: 1.75 });
    assert_eq!(l[1].segment, DiarSegment { speaker: "bob".into(), start: 2.0, end: 2.75 });
    assert!(l.iter().all(|x| x.recording == "rec1"));
}

#[test]
fn emit_parse_is_identity_on_normalized_text() {
    let l = parse_rttm(TWO, "two.rttm").unwrap();
    let segs: Vec<DiarSegment> = l.into_iter().map(|x| x.segment).collect();
    assert_eq!(emit_rttm("rec1", &segs), TWO);
    let messy = "SPEAKER  rec1 1 0.5   1.25 <NA> <NA> alice <NA> <NA>\nSPEAKER rec1 1 2 0.750 <NA> <NA> bob <NA> <NA>";
    let segs: Vec<DiarSegment> = parse_rttm(messy, "m").unwrap().into_iter().map(|x| x.segment).collect();
    assert_eq!(emit_rttm("rec1", &segs), TWO);
}

#[test]
fn malformed_lines_name_the_line() {
    let bad = format!("{TWO}SPEAKER rec1 1 0.50 1.25 <NA> <NA> alice\n");
    match parse_rttm(&bad, "bad.rttm") {
        Err(Error::Parse { path, line, .. }) => assert_eq!((path.as_str(), line), ("bad.rttm", 3)),
        other => panic!("{other:?}"),
    }
    for line in [
        "SPEAKER r 1 x 1.0 <NA> <NA> a <NA> <NA>",
        "SPEAKER r 1 1.0 -1.0 <NA> <NA> a <NA> <NA>",
        "LEXEME r 1 1.0 1.0 <NA> <NA> a <NA> <NA>",
    ] {
        assert!(matches!(parse_rttm(line, "x"), Err(Error::Parse { line: 1, .. })), "{line}");
    }
}

#[test]
fn grouping_keeps_file_order() {
    let text = "SPEAKER b 1 0.00 1.00 <NA> <NA> x <NA> <NA>\nSPEAKER a 1 3.00 1.00 <NA> <NA> y <NA> <NA>\nSPEAKER b 1 0.50 1.00 <NA> <NA> z <NA> <NA>\n";
    let g = group_by_recording(parse_rttm(text, "g").unwrap());
    assert_eq!(g.keys().collect::<Vec<_>>(), vec!["a", "b"]);
    assert_eq!(g["b"][1].speaker, "z");
}

proptest! {
    #[test]
    fn roundtrip_at_two_decimals(raw in prop::collection::vec((0u32..100_000, 1u32..5000, 0usize..4), 0..30)) {
        let segs: Vec<DiarSegment> = raw.iter().map(|&(s, d, k)| DiarSegment {
            speaker: format!("spk{k}"),
            start: s as f64 / 100.0,
            end: (s + d) as f64 / 100.0,
        }).collect();
        let text = emit_rttm("r", &segs);
        let back: Vec<DiarSegment> = parse_rttm(&text, "r").unwrap().into_iter().map(|x| x.segment).collect();
        prop_assert_eq!(emit_rttm("r", &back), text);
        for (a, b) in segs.iter().zip(&back) {
            prop_assert!((a.start - b.start).abs() < 1e-9 && (a.end - b.end).abs() < 1e-9);
        }
    }
}
