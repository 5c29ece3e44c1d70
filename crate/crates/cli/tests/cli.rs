use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use motion_wsod::flowio::{encode_flo, write_flow_file};
use motion_wsod::FlowField;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_motion-wsod"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn decode_png(path: &Path) -> (u32, u32, Vec<u8>) {
    let dec = png::Decoder::new(std::io::BufReader::new(fs::File::open(path).unwrap()));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (info.width, info.height, buf)
}

/// 20×20 field of rightward flow; the box `[5, 15)²` covers 100 pixel
/// centers, the remaining 300 are outside.
fn fixture(inside: impl Fn(usize) -> f32, outside: impl Fn(usize) -> f32) -> FlowField {
    let (mut i, mut o) = (0, 0);
    FlowField::from_fn(20, 20, |x, y| {
        let u = if (5..15).contains(&x) && (5..15).contains(&y) {
            i += 1;
            inside(i - 1)
        } else {
            o += 1;
            outside(o - 1)
        };
        (u, 0.0)
    })
}

/// The two selection examples: a still object on a moving background
/// (ib 0.18, ob 0.23) and a clearly moving one (ib 0.41, ob 0.09). Each
/// field's maximum magnitude is 1 so normalization leaves values unchanged.
fn write_fig3(dir: &Path) {
    let flows = dir.join("flows");
    fs::create_dir_all(&flows).unwrap();
    let horse = fixture(|_| 0.18, |k| if k == 0 { 1.0 } else { (0.23 * 300.0 - 1.0) / 299.0 });
    let bus = fixture(|k| if k == 0 { 1.0 } else { (0.41 * 100.0 - 1.0) / 99.0 }, |_| 0.09);
    write_flow_file(&horse, flows.join("horse.flo")).unwrap();
    write_flow_file(&bus, flows.join("bus.flo")).unwrap();
    fs::write(
        dir.join("boxes.json"),
        r#"[{"image_id": "horse", "box": [5, 5, 15, 15]}, {"image_id": "bus", "box": [5, 5, 15, 15]}]"#,
    )
    .unwrap();
}

fn manifest(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn colorize_zero_field_is_white() {
    let dir = tempfile::tempdir().unwrap();
    let flo = dir.path().join("zero.flo");
    let png = dir.path().join("zero.png");
    write_flow_file(&FlowField::zeros(7, 5), &flo).unwrap();
    let o = run(&["flow", "colorize", p(&flo), p(&png)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (w, h, data) = decode_png(&png);
    assert_eq!((w, h), (7, 5));
    assert_eq!(data.len(), 7 * 5 * 3);
    assert!(data.iter().all(|&b| b == 255));
}

#[test]
fn select_fig3_keeps_only_the_bus() {
    let dir = tempfile::tempdir().unwrap();
    write_fig3(dir.path());
    let out = dir.path().join("manifest.jsonl");
    let o = run(&[
        "select",
        "--flows",
        p(&dir.path().join("flows")),
        "--boxes",
        p(&dir.path().join("boxes.json")),
        "--m",
        "0.2",
        "--d",
        "1.5",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let recs = manifest(&out);
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[0]["image_id"], "horse");
    assert_eq!(recs[1]["image_id"], "bus");
    assert_eq!(recs[0]["selected"], false);
    assert_eq!(recs[1]["selected"], true);
    let close = |v: &Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-6;
    assert!(close(&recs[0]["ib"], 0.18) && close(&recs[0]["ob"], 0.23));
    assert!(close(&recs[1]["ib"], 0.41) && close(&recs[1]["ob"], 0.09));
}

#[test]
fn defaults_file_fills_unset_flags_only() {
    let dir = tempfile::tempdir().unwrap();
    write_fig3(dir.path());
    let defaults = dir.path().join("defaults.txt");
    fs::write(&defaults, "# stricter threshold rejects the bus too\nm = 0.5\n").unwrap();
    let out = dir.path().join("m.jsonl");
    let flows = dir.path().join("flows");
    let boxes = dir.path().join("boxes.json");
    let base = ["select", "--flows", p(&flows), "--boxes", p(&boxes), "--out", p(&out)];

    let mut args = vec!["--defaults", p(&defaults)];
    args.extend(base);
    assert_eq!(code(&run(&args)), 0);
    assert!(manifest(&out).iter().all(|r| r["selected"] == false));

    args.extend(["--m", "0.2"]);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(manifest(&out)[1]["selected"], true);

    fs::write(&defaults, "no_such_flag = 1\n").unwrap();
    let mut args = vec!["--defaults", p(&defaults)];
    args.extend(base);
    assert_eq!(code(&run(&args)), 1);
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    write_fig3(dir.path());
    let flows = dir.path().join("flows");
    let boxes = dir.path().join("boxes.json");
    let out = dir.path().join("o.jsonl");
    let sel = |m: &str| {
        run(&[
            "select",
            "--flows",
            p(&flows),
            "--boxes",
            p(&boxes),
            "--m",
            m,
            "--out",
            p(&out),
        ])
    };
    assert_eq!(code(&sel("-1")), 1);
    assert_eq!(code(&sel("nan")), 1);
    assert_eq!(code(&run(&["flow", "frobnicate"])), 1);
    assert_eq!(code(&run(&["gradcheck"])), 1);

    fs::remove_file(flows.join("bus.flo")).unwrap();
    assert_eq!(code(&sel("0.2")), 2);

    let bad = dir.path().join("bad.flo");
    let mut bytes = encode_flo(&FlowField::zeros(2, 2));
    bytes[0] ^= 0xff;
    fs::write(&bad, &bytes).unwrap();
    let o = run(&["flow", "magnitude", p(&bad), p(&dir.path().join("m.png"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
    fs::write(&bad, &encode_flo(&FlowField::zeros(2, 2))[..20]).unwrap();
    let o = run(&["flow", "colorize", p(&bad), p(&dir.path().join("c.png"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
}

#[test]
fn nonfinite_flow_needs_explicit_zero_fill() {
    let dir = tempfile::tempdir().unwrap();
    let flo = dir.path().join("nan.flo");
    let mut bytes = encode_flo(&FlowField::zeros(2, 2));
    bytes[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&flo, bytes).unwrap();
    let png = dir.path().join("c.png");
    assert_eq!(code(&run(&["flow", "colorize", p(&flo), p(&png)])), 2);
    let o = run(&["flow", "colorize", p(&flo), p(&png), "--zero-fill-nonfinite"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn normalize_removes_uniform_camera_motion() {
    let dir = tempfile::tempdir().unwrap();
    let flo = dir.path().join("cam.flo");
    let out = dir.path().join("norm.flo");
    let report = dir.path().join("r.json");
    let flow = FlowField::from_fn(30, 30, |x, y| {
        if (10..20).contains(&x) && (10..20).contains(&y) {
            (5.0, -1.0)
        } else {
            (2.0, -3.0)
        }
    });
    write_flow_file(&flow, &flo).unwrap();
    let o = run(&["flow", "normalize", p(&flo), p(&out), "--report", p(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let norm = motion_wsod::flowio::read_flow_file(&out).unwrap();
    assert_eq!(norm.at(0, 0), (0.0, 0.0));
    assert_eq!(norm.at(15, 15), (3.0, 2.0));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["background"]["flow"], serde_json::json!([2.0, -3.0]));
    assert_eq!(r["background"]["contributing_corners"].as_array().unwrap().len(), 4);
}

#[test]
fn gradcheck_all_passes() {
    let o = run(&["gradcheck", "--all"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    for suite in ["milhead", "contrastive", "trainer-objective"] {
        let line = table.lines().find(|l| l.starts_with(&format!("| {suite} |"))).unwrap();
        assert!(line.contains("| 100 |") && line.ends_with("PASS |"), "{line}");
    }
}

#[test]
fn help_for_every_subcommand() {
    let subs: &[&[&str]] = &[
        &[],
        &["flow"],
        &["flow", "colorize"],
        &["flow", "magnitude"],
        &["flow", "normalize"],
        &["select"],
        &["synth"],
        &["synth", "generate"],
        &["train-toy"],
        &["ablate"],
        &["gradcheck"],
        &["eval"],
    ];
    for s in subs {
        let mut args = s.to_vec();
        args.push("--help");
        let o = run(&args);
        assert_eq!(code(&o), 0, "{args:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{args:?}");
    }
}

#[test]
fn synth_train_eval_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"train_size": 24, "eval_size": 8}"#).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = run(&["synth", "generate", "--spec", p(&spec), "--out", p(d), "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ma = fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.jsonl")).unwrap());
    assert_eq!(manifest(&a.join("manifest.jsonl")).len(), 32);
    let first = &manifest(&a.join("manifest.jsonl"))[0];
    let flo = a.join(first["flow"].as_str().unwrap());
    assert_eq!(
        fs::read(&flo).unwrap(),
        fs::read(b.join(first["flow"].as_str().unwrap())).unwrap()
    );

    fs::write(&spec, r#"{"train_size": 24, "eval_size": 8, "typo": 1}"#).unwrap();
    assert_eq!(
        code(&run(&["synth", "generate", "--spec", p(&spec), "--out", p(&a)])),
        2
    );

    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"benchmark": {"train_size": 24, "eval_size": 8}, "train": {"epochs": 3, "seed": 7}}"#,
    )
    .unwrap();
    let (report, model) = (dir.path().join("r.json"), dir.path().join("m.json"));
    let o = run(&[
        "train-toy",
        "--config",
        p(&cfg),
        "--out",
        p(&report),
        "--model-out",
        p(&model),
        "--normalize",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["epochs"].as_array().unwrap().len(), 3);
    assert!(r["epochs"][0]["nce_loss"].is_f64());

    // same seed and sizes: the eval split is the one train-toy evaluated on
    let o = run(&["eval", "--model", p(&model), "--data", p(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(e["evaluated"], 8);
    assert_eq!(e["corloc"], r["corloc"]);
}
