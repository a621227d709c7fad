use std::path::Path;
use std::process::{Command, Output};

use alertkit::formats::{self, LayerRef, Manifest, ManifestEntry};
use alertkit::model::ActivationMap;

fn alertkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alertkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

const GT_TWO: &str = r#"{"frame_id":"a","category":"car","bbox":[0,0,10,10]}
{"frame_id":"b","category":"person","bbox":[20,20,40,60]}
{"frame_id":"b","category":"car","bbox":[50,50,80,70]}
"#;

const DET_PERFECT: &str = r#"{"frame_id":"a","category":"car","bbox":[0,0,10,10],"score":1.0}
{"frame_id":"b","category":"person","bbox":[20,20,40,60],"score":1.0}
{"frame_id":"b","category":"car","bbox":[50,50,80,70],"score":1.0}
"#;

#[test]
fn eval_map_perfect_fixture_is_one() {
    let d = tempfile::tempdir().unwrap();
    let (gt, det, out) = (
        d.path().join("gt.jsonl"),
        d.path().join("det.jsonl"),
        d.path().join("map.jsonl"),
    );
    std::fs::write(&gt, GT_TWO).unwrap();
    std::fs::write(&det, DET_PERFECT).unwrap();
    assert_eq!(
        code(&alertkit(&[
            "eval-map",
            "--gt",
            &s(&gt),
            "--det",
            &s(&det),
            "--out",
            &s(&out)
        ])),
        0
    );
    let maps = formats::read_map_file(&out).unwrap();
    assert_eq!(maps.len(), 2);
    assert!(maps.iter().all(|(_, m)| *m == Some(1.0)));
}

#[test]
fn eval_map_hand_built_frames() {
    // a: miss ranked above hit → 0.5; b: nothing detected → 0; c: no ground truth → null
    let d = tempfile::tempdir().unwrap();
    let (gt, det, out) = (
        d.path().join("gt.jsonl"),
        d.path().join("det.jsonl"),
        d.path().join("map.jsonl"),
    );
    std::fs::write(
        &gt,
        r#"{"frame_id":"a","category":"car","bbox":[0,0,10,10]}
{"frame_id":"b","category":"person","bbox":[0,0,10,10]}
"#,
    )
    .unwrap();
    std::fs::write(
        &det,
        r#"{"frame_id":"a","category":"car","bbox":[50,50,60,60],"score":0.9}
{"frame_id":"a","category":"car","bbox":[0,0,10,10],"score":0.4}
"#,
    )
    .unwrap();
    assert_eq!(
        code(&alertkit(&[
            "eval-map",
            "--gt",
            &s(&gt),
            "--det",
            &s(&det),
            "--out",
            &s(&out)
        ])),
        0
    );
    assert_eq!(
        formats::read_map_file(&out).unwrap(),
        vec![("a".to_string(), Some(0.5)), ("b".to_string(), Some(0.0))]
    );
}

#[test]
fn eval_map_error_contracts() {
    let d = tempfile::tempdir().unwrap();
    let (gt, det, out) = (
        d.path().join("gt.jsonl"),
        d.path().join("det.jsonl"),
        d.path().join("map.jsonl"),
    );
    std::fs::write(&gt, GT_TWO).unwrap();
    std::fs::write(
        &det,
        "{\"frame_id\":\"a\",\"category\":\"car\",\"bbox\":[0,0,1,1],\"score\":0.5}\n{oops\n",
    )
    .unwrap();
    let r = alertkit(&[
        "eval-map",
        "--gt",
        &s(&gt),
        "--det",
        &s(&det),
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains(":2:"));

    std::fs::write(
        &det,
        "{\"frame_id\":\"zz\",\"category\":\"car\",\"bbox\":[0,0,1,1],\"score\":0.5}\n",
    )
    .unwrap();
    let r = alertkit(&[
        "eval-map",
        "--gt",
        &s(&gt),
        "--det",
        &s(&det),
        "--out",
        &s(&out),
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("zz"));

    std::fs::write(
        &det,
        "{\"frame_id\":\"a\",\"category\":\"car\",\"bbox\":[0,0,1,1],\"score\":1.5}\n",
    )
    .unwrap();
    assert_eq!(
        code(&alertkit(&[
            "eval-map",
            "--gt",
            &s(&gt),
            "--det",
            &s(&det),
            "--out",
            &s(&out)
        ])),
        3
    );
}

#[test]
fn label_modes_and_conflict() {
    let d = tempfile::tempdir().unwrap();
    let maps = d.path().join("map.jsonl");
    let out = d.path().join("labels.jsonl");
    formats::write_map_file(&maps, &[("x".into(), Some(0.3)), ("y".into(), Some(0.7))]).unwrap();
    assert_eq!(
        code(&alertkit(&[
            "label",
            "--maps",
            &s(&maps),
            "--out",
            &s(&out),
            "--lambda",
            "0.5"
        ])),
        0
    );
    let (header, labels) = formats::read_label_file(&out).unwrap();
    assert_eq!(header.unwrap().lambda, 0.5);
    assert!(labels[0].label.is_failure() && !labels[1].label.is_failure());

    let ten: Vec<(String, Option<f64>)> = (1..=10)
        .map(|i| (format!("f{i}"), Some(i as f64 / 10.0)))
        .collect();
    formats::write_map_file(&maps, &ten).unwrap();
    let r = alertkit(&[
        "label",
        "--maps",
        &s(&maps),
        "--out",
        &s(&out),
        "--percentile",
        "20",
    ]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("lambda=0.2"));
    assert_eq!(
        formats::read_label_file(&out).unwrap().0.unwrap().lambda,
        0.2
    );

    let r = alertkit(&[
        "label",
        "--maps",
        &s(&maps),
        "--out",
        &s(&out),
        "--percentile",
        "20",
        "--lambda",
        "0.5",
    ]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("mutually exclusive"));
}

fn write_manifest(dir: &Path, maps: &[ActivationMap]) -> std::path::PathBuf {
    let entries = maps
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let rel = format!("{}.actf", m.frame_id());
            formats::write_actf(&dir.join(&rel), m).unwrap();
            ManifestEntry {
                frame_id: m.frame_id().to_string(),
                detections: None,
                groundtruth: None,
                activations: vec![LayerRef {
                    layer: m.layer_name().to_string(),
                    path: rel.into(),
                }],
                order: Some(i as u64),
            }
        })
        .collect();
    let p = dir.join("manifest.jsonl");
    Manifest { entries }.write(&p).unwrap();
    p
}

#[test]
fn pool_shapes_values_and_corruption() {
    let d = tempfile::tempdir().unwrap();
    let small = ActivationMap::new("k", "l", 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let manifest = write_manifest(d.path(), &[small]);
    let out = d.path().join("f.jsonl");
    assert_eq!(
        code(&alertkit(&[
            "pool",
            "--manifest",
            &s(&manifest),
            "--out",
            &s(&out)
        ])),
        0
    );
    let f = formats::read_features(&out, None).unwrap();
    assert_eq!(f[0].values.len(), 3);
    assert!((f[0].values[0] - 2.5).abs() < 1e-12);
    assert!((f[0].values[1] - 4.0).abs() < 1e-12);
    assert!((f[0].values[2] - 1.25f64.sqrt()).abs() < 1e-12);

    let wide: Vec<ActivationMap> = (0..2)
        .map(|i| {
            ActivationMap::new(format!("w{i}"), "l", 64, 2, 3, vec![i as f64; 64 * 6]).unwrap()
        })
        .collect();
    let d2 = tempfile::tempdir().unwrap();
    let manifest = write_manifest(d2.path(), &wide);
    assert_eq!(
        code(&alertkit(&[
            "pool",
            "--manifest",
            &s(&manifest),
            "--out",
            &s(&out)
        ])),
        0
    );
    assert!(formats::read_features(&out, None)
        .unwrap()
        .iter()
        .all(|f| f.values.len() == 192));

    let actf = d2.path().join("w1.actf");
    let bytes = std::fs::read(&actf).unwrap();
    std::fs::write(&actf, &bytes[..bytes.len() - 7]).unwrap();
    let r = alertkit(&["pool", "--manifest", &s(&manifest), "--out", &s(&out)]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("corrupt tensor"));
}

#[test]
fn metrics_four_pair_fixture() {
    let d = tempfile::tempdir().unwrap();
    let (scores, labels, report) = (
        d.path().join("s.jsonl"),
        d.path().join("l.jsonl"),
        d.path().join("r.json"),
    );
    formats::write_scores(
        &scores,
        &[
            ("p1".into(), 0.8),
            ("p2".into(), 0.4),
            ("n1".into(), 0.6),
            ("n2".into(), 0.2),
        ],
    )
    .unwrap();
    let maps =
        [("p1", 0.1), ("p2", 0.2), ("n1", 0.9), ("n2", 0.8)].map(|(id, m)| (id.to_string(), m));
    let labelled = alertkit::labeling::apply_threshold(&maps, 0.5);
    let header = formats::LabelHeader {
        lambda: 0.5,
        mode: "absolute".into(),
        percentile: None,
    };
    formats::write_label_file(&labels, &header, &labelled).unwrap();
    let r = alertkit(&[
        "metrics",
        "--scores",
        &s(&scores),
        "--labels",
        &s(&labels),
        "--out",
        &s(&report),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["auroc"].as_f64().unwrap(), 0.75);
}

#[test]
fn monitor_on_perfect_fixture_raises_no_alarm() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let out = dir.join("synth");
    // walk pinned at zero: every frame is detected perfectly
    let r = alertkit(&[
        "synth",
        "--out",
        &s(&out),
        "--frames",
        "30",
        "--channels",
        "4",
        "--initial-condition",
        "0",
        "--segment",
        "0:30:0",
    ]);
    assert_eq!(code(&r), 0);
    let maps = dir.join("map.jsonl");
    assert_eq!(
        code(&alertkit(&[
            "eval-map",
            "--gt",
            &s(&out.join("gt.jsonl")),
            "--det",
            &s(&out.join("det.jsonl")),
            "--out",
            &s(&maps)
        ])),
        0
    );
    assert!(formats::read_map_file(&maps)
        .unwrap()
        .iter()
        .all(|(_, m)| *m == Some(1.0)));

    let ids = Manifest::read(&out.join("manifest.jsonl"))
        .unwrap()
        .frame_ids();
    let scores = dir.join("scores.jsonl");
    formats::write_scores(
        &scores,
        &ids.iter().map(|id| (id.clone(), 0.1)).collect::<Vec<_>>(),
    )
    .unwrap();
    let log = dir.join("monitor.csv");
    let r = alertkit(&[
        "monitor",
        "--manifest",
        &s(&out.join("manifest.jsonl")),
        "--scores",
        &s(&scores),
        "--out",
        &s(&log),
        "--window",
        "10",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(&log).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 21);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[2], "1");
        assert_eq!(cols[4], "0");
    }
}

#[test]
fn monitor_requires_order_index() {
    let d = tempfile::tempdir().unwrap();
    let m = ActivationMap::new("k", "l", 1, 1, 1, vec![0.0]).unwrap();
    let manifest = write_manifest(d.path(), &[m]);
    let mut man = Manifest::read(&manifest).unwrap();
    man.entries[0].order = None;
    man.write(&manifest).unwrap();
    let scores = d.path().join("s.jsonl");
    formats::write_scores(&scores, &[("k".into(), 0.9)]).unwrap();
    let r = alertkit(&[
        "monitor",
        "--manifest",
        &s(&manifest),
        "--scores",
        &s(&scores),
        "--out",
        &s(&d.path().join("m.csv")),
        "--window",
        "1",
    ]);
    assert_eq!(code(&r), 2);
}
