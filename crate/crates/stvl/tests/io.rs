use std::fs;
use std::io::BufReader;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use stvl::io::{self, IoError};
use stvl::records::{self, RecordError};
use stvl_core::dataset::SftRecord;
use stvl_core::eval::Prediction;
use stvl_core::grid::{Cell, GridError, GridSpec, TrafficTensor};
use stvl_core::numcodec::{FpToken, VOCAB_SIZE};

fn spec(h: usize, w: usize) -> GridSpec {
    GridSpec::new(h, w, 600_000)
}

#[test]
fn canonical_duplicates_are_summed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.csv");
    fs::write(&path, "timestamp_ms,row,col,value\n600000,2,1,4\n0,1,1,5.0\n600000,2,1,3\n").unwrap();
    let t = io::read_canonical_csv(&path, spec(2, 2)).unwrap();
    assert_eq!(t.frames(), 2);
    assert_eq!(t.value(1, Cell::new(2, 1)), 7.0);
    assert_eq!(t.value(0, Cell::new(1, 1)), 5.0);
    assert!(t.is_observed(1, Cell::new(2, 1)));
    assert!(!t.is_observed(0, Cell::new(2, 2)));
    assert_eq!(t.observed_mask().iter().filter(|o| **o).count(), 2);
}

#[test]
fn canonical_empty_with_declared_span() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    fs::write(&path, "timestamp_ms,row,col,value\n").unwrap();
    let declared = GridSpec {
        start_ms: Some(0),
        frames: Some(1),
        ..spec(2, 2)
    };
    let t = io::read_canonical_csv(&path, declared).unwrap();
    assert_eq!((t.frames(), t.height(), t.width()), (1, 2, 2));
    assert!(t.observed_mask().iter().all(|o| !o));
}

#[test]
fn canonical_errors_report_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "timestamp_ms,row,col,value\n0,1,1,5\n0,1,x,5\n").unwrap();
    match io::read_canonical_csv(&path, spec(2, 2)) {
        Err(IoError::MalformedRow { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    fs::write(&path, "timestamp_ms,row,col,value\n0,3,1,5\n").unwrap();
    assert!(matches!(
        io::read_canonical_csv(&path, spec(2, 2)),
        Err(IoError::Grid(GridError::GridOverflow { .. }))
    ));
}

#[test]
fn tim_square_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tim.txt");
    fs::write(&path, "1\t0\t1.5\n101\t0\t2\n10000\t0\t3\n").unwrap();
    let t = io::read_tim(&path, spec(100, 100), 2).unwrap();
    assert_eq!(t.value(0, Cell::new(1, 1)), 1.5);
    assert_eq!(t.value(0, Cell::new(2, 1)), 2.0);
    assert_eq!(t.value(0, Cell::new(100, 100)), 3.0);

    fs::write(&path, "square_id,time_interval,value\n10001,0,1\n").unwrap();
    assert!(matches!(
        io::read_tim(&path, spec(100, 100), 2),
        Err(IoError::Grid(GridError::SquareIdOutOfRange { id: 10001, .. }))
    ));
}

#[test]
fn vocab_file_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.tsv");
    io::write_vocab(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), i);
        let tok = FpToken::from_label(f[1]).unwrap();
        assert_eq!(tok.id() as usize, i);
        assert_eq!(f[2].parse::<f64>().unwrap().to_bits(), tok.value().to_bits());
        n += 1;
    }
    assert_eq!(n, VOCAB_SIZE);
    assert!(text.starts_with("0\t<|FP-9999/-4|>\t-9.9989999999999996e-4\n"));
}

#[test]
fn predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    let preds = vec![
        Prediction {
            anchor_ms: 10,
            cell: Cell::new(1, 2),
            values: vec![0.1, 2.5, 1e-7],
        },
        Prediction {
            anchor_ms: 20,
            cell: Cell::new(1, 2),
            values: vec![3.0],
        },
    ];
    io::write_predictions(&path, &preds).unwrap();
    assert_eq!(io::read_predictions(&path).unwrap(), preds);
    fs::write(&path, "anchor_ms,row,col,step,value\n0,1,1,2,5\n").unwrap();
    assert!(matches!(io::read_predictions(&path), Err(IoError::MalformedRow { line: 2, .. })));
}

#[test]
fn png_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.png");
    let img = stvl_core::visual::to_image(&[0.0, 0.5, 1.0, 0.25, 0.75, 1.0], 2, 3).unwrap();
    io::write_png(&path, &img).unwrap();
    let back = image::open(&path).unwrap().to_rgb8();
    assert_eq!(back.dimensions(), (3, 2));
    assert_eq!(back.get_pixel(1, 0).0, [128; 3]);
    assert_eq!(back.get_pixel(0, 1).0, [64; 3]);
}

fn tensor_strategy() -> impl Strategy<Value = TrafficTensor> {
    (1usize..4, 1usize..4, 1usize..5, -1_000i64..1_000, 1i64..1_000).prop_flat_map(|(t, h, w, start, step)| {
        proptest::collection::vec(proptest::option::weighted(0.8, 0.0f64..1e6), t * h * w).prop_map(move |vals| {
            let observed: Vec<bool> = vals.iter().map(Option::is_some).collect();
            let values = vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            TrafficTensor::new(h, w, start, step, values, observed).unwrap()
        })
    })
}

fn record_strategy() -> impl Strategy<Value = SftRecord> {
    (
        proptest::collection::vec("[a-z]{1,6}:[0-9]{1,13}", 1..4),
        "[ -~\u{e9}\u{4e2d}\n\"]{0,40}",
        proptest::collection::vec(0u32..VOCAB_SIZE as u32, 1..40),
    )
        .prop_map(|(frames, prompt, ids)| {
            let mut rec = SftRecord {
                frames,
                prompt,
                targets: ids.into_iter().map(|i| FpToken::from_id(i).unwrap()).collect(),
                mask: Vec::new(),
            };
            rec.mask = rec.expected_mask();
            rec
        })
}

proptest! {
    #[test]
    fn cache_round_trip(t in tensor_strategy()) {
        let mut buf = Vec::new();
        io::write_cache_to(&mut buf, &t).unwrap();
        prop_assert_eq!(io::parse_cache(&buf).unwrap(), t);
    }

    #[test]
    fn sft_records_round_trip(recs in proptest::collection::vec(record_strategy(), 0..8)) {
        let mut buf = Vec::new();
        for r in &recs {
            records::write_sft(&mut buf, r).unwrap();
        }
        prop_assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), recs.len());
        prop_assert_eq!(records::read_sft(BufReader::new(&buf[..])).unwrap(), recs);
    }
}

#[test]
fn hundred_records_round_trip() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let recs: Vec<SftRecord> = (0..100)
        .map(|_| record_strategy().new_tree(&mut runner).unwrap().current())
        .collect();
    let mut buf = Vec::new();
    for r in &recs {
        records::write_sft(&mut buf, r).unwrap();
    }
    assert_eq!(records::read_sft(&buf[..]).unwrap(), recs);
    let single = recs.iter().find(|r| r.targets.len() == 1).cloned().unwrap_or_else(|| SftRecord {
        frames: vec!["s:0".into()],
        prompt: "p ".into(),
        targets: vec![FpToken::ZERO],
        mask: vec![1],
    });
    let mut line = Vec::new();
    records::write_sft(&mut line, &single).unwrap();
    let text = String::from_utf8(line).unwrap();
    assert!(text.contains(&format!("\"targets\":[\"{}\"]", single.targets[0])));
    let keys: Vec<usize> = ["\"frames\"", "\"prompt\"", "\"targets\"", "\"mask\""]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]), "field order");
}

#[test]
fn schema_violation_line() {
    let text = "{\"frames\":[],\"prompt\":\"\",\"targets\":[\"<|FP10/0|>\"],\"mask\":[0]}\n\n{\"frames\":[]}\n";
    match records::read_sft(text.as_bytes()) {
        Err(RecordError::SchemaViolation { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}
