use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use craft_core::data::{load_checkpoint, save_checkpoint, Checkpoint, ImageBuffer};
use craft_core::model::{CraftConfig, CraftModel};
use craft_core::quant::pass_through_table;
use craft_core::Tensor;

fn craft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_craft"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = craft(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn fails(args: &[&str]) -> String {
    let o = craft(args);
    assert!(!o.status.success(), "{args:?} should fail");
    let err = String::from_utf8_lossy(&o.stderr).to_string();
    let last = err.trim_end().lines().last().unwrap_or("").to_string();
    assert!(last.starts_with("error: "), "unexpected stderr {err:?}");
    last
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const MICRO: [&str; 10] = ["--channels", "8", "--heads", "2", "--rcrfg", "1", "--crfb", "1", "--count", "4"];

fn train_micro(dir: &Path, name: &str, iters: &str, scale: &str) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["train", "--scale", scale, "--iters", iters, "--batch", "2", "--size", "32", "--seed", "3", "--log-every", "1", "--out", p(&out)];
    args.extend(MICRO);
    ok(&args);
    out
}

fn grating(size: usize, cycles: usize) -> ImageBuffer {
    let t = Tensor::from_fn(&[1, 3, size, size], |i| {
        let x = (i % size) as f32;
        0.5 + 0.4 * (2.0 * std::f32::consts::PI * cycles as f32 * x / size as f32).cos()
    });
    ImageBuffer::from_tensor(&t).unwrap()
}

#[test]
fn train_is_deterministic_and_zero_iters_is_init() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_micro(dir.path(), "a.crft", "2", "2");
    let b = train_micro(dir.path(), "b.crft", "2", "2");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let loss = fs::read_to_string(dir.path().join("a.crft.loss.csv")).unwrap();
    assert_eq!(loss.lines().next(), Some("iter,loss"));
    assert_eq!(loss.lines().count(), 3);
    let manifest = fs::read_to_string(dir.path().join("a.crft.manifest")).unwrap();
    assert!(manifest.lines().all(|l| l.contains('=')));
    assert!(manifest.contains("command=train\n") && manifest.contains("seed=3\n"));

    let z = train_micro(dir.path(), "z.crft", "0", "2");
    let mut cfg = CraftConfig::with_scale(2);
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.n_rcrfg = 1;
    cfg.n_crfb = 1;
    assert_eq!(load_checkpoint(&z).unwrap().model, CraftModel::new(cfg, 3).unwrap());
}

#[test]
fn train_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.crft");
    assert!(fails(&["train", "--scale", "5", "--out", p(&out)]).contains("scale"));
    assert!(fails(&["train", "--data", p(&dir.path().join("nope")), "--out", p(&out)]).contains("nope"));
}

#[test]
fn sr_shapes_determinism_and_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_micro(dir.path(), "x4.crft", "0", "4");
    let input = dir.path().join("in.ppm");
    grating(24, 3).save(&input).unwrap();
    let o1 = dir.path().join("o1.ppm");
    let o2 = dir.path().join("o2.ppm");
    let out = ok(&["sr", "--model", p(&model), "--input", p(&input), "--output", p(&o1)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("24x24 -> 96x96"));
    ok(&["sr", "--model", p(&model), "--input", p(&input), "--output", p(&o2)]);
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
    let img = ImageBuffer::load(&o1).unwrap();
    assert_eq!((img.width, img.height), (96, 96));

    // 32-bit sentinel table: quantized run equals the float run
    let ck = load_checkpoint(&model).unwrap();
    let table = pass_through_table(&ck.model).unwrap();
    let q = dir.path().join("q.crft");
    save_checkpoint(&Checkpoint::new(ck.model, Some(table)), &q).unwrap();
    let o3 = dir.path().join("o3.ppm");
    ok(&["sr", "--model", p(&q), "--input", p(&input), "--output", p(&o3), "--quantized"]);
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o3).unwrap());

    assert!(fails(&["sr", "--model", p(&model), "--input", p(&input), "--output", p(&o3), "--scale", "2"]).contains("scale"));
    assert!(fails(&["sr", "--model", p(&model), "--input", p(&input), "--output", p(&o3), "--quantized"]).contains("quantization"));
}

#[test]
fn freq_drop_rows() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_micro(dir.path(), "m.crft", "0", "2");
    let d = dir.path().join("d.csv");
    let e = dir.path().join("e.csv");
    let common = ["--size", "32", "--count", "2", "--gammas", "0:0:1"];
    let mut a = vec!["freq-drop", "--model", p(&model), "--mode", "D", "--out", p(&d)];
    a.extend(common);
    ok(&a);
    let mut b = vec!["freq-drop", "--model", p(&model), "--mode", "E", "--out", p(&e)];
    b.extend(common);
    ok(&b);
    let text = fs::read_to_string(&d).unwrap();
    assert_eq!(text, "x,ratio\n0.000000,0.000000\n");
    assert_eq!(text, fs::read_to_string(&e).unwrap());
    assert!(dir.path().join("d.csv.manifest").exists());

    let t = dir.path().join("t.csv");
    ok(&["freq-drop", "--model", "bicubic", "--scale", "2", "--size", "32", "--count", "2", "--thetas", "3,5", "--out", p(&t)]);
    assert_eq!(fs::read_to_string(&t).unwrap().lines().count(), 3);
    let err = fails(&["freq-drop", "--model", "bicubic", "--gammas", "0.5:0.1:0.1", "--out", p(&t)]);
    assert!(err.contains("empty gamma list"), "{err}");
}

#[test]
fn quantize_outputs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = train_micro(dir.path(), "m.crft", "1", "2");
    let run = |name: &str, extra: &[&str]| -> PathBuf {
        let out = dir.path().join(name);
        let mut a = vec!["quantize", "--model", p(&model), "--bits", "4", "--calib-count", "2", "--patch", "16", "--count", "2", "--size", "32", "--out", p(&out)];
        a.extend(extra);
        ok(&a);
        out
    };
    let q0 = run("q0.crft", &["--epochs", "0", "--beta", "0.0"]);
    let q9 = run("q9.crft", &["--epochs", "0", "--beta", "0.99"]);
    let s0 = fs::read_to_string(dir.path().join("q0.crft.sites.csv")).unwrap();
    let s9 = fs::read_to_string(dir.path().join("q9.crft.sites.csv")).unwrap();
    assert_ne!(s0, s9);
    assert!(s0.starts_with("site,kind,measure,l,u,bits\n"));
    assert_eq!(fs::read_to_string(dir.path().join("q0.crft.loss.csv")).unwrap(), "stage,loss\n");
    let ck = load_checkpoint(&q0).unwrap();
    assert_eq!(ck.quant.unwrap().get("input").unwrap().params.bits, 8);
    assert!(load_checkpoint(&q9).unwrap().quant.is_some());

    run("qr.crft", &["--epochs", "1"]);
    let losses = fs::read_to_string(dir.path().join("qr.crft.loss.csv")).unwrap();
    assert!(losses.contains("initial,") && losses.contains("final,"));

    let out = dir.path().join("bad.crft");
    assert!(fails(&["quantize", "--model", p(&model), "--bits", "5", "--out", p(&out)]).contains("bit-width"));
    assert!(fails(&["quantize", "--model", p(&model), "--method", "kl", "--out", p(&out)]).contains("unknown method"));
}

#[test]
fn eval_self_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("self.csv");
    ok(&["eval", "--model", "bicubic", "--scale", "1", "--count", "2", "--size", "32", "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text, "image,psnr,ssim\n0,inf,1.000000\n1,inf,1.000000\nmean,inf,1.000000\n");

    let model = train_micro(dir.path(), "m.crft", "1", "2");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["eval", "--model", p(&model), "--count", "2", "--size", "32", "--out", p(&a)]);
    ok(&["eval", "--model", p(&model), "--count", "2", "--size", "32", "--out", p(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fails(&["eval", "--model", p(&model), "--metrics", "lpips", "--out", p(&a)]).contains("lpips"));
    assert!(fails(&["eval", "--model", p(&model), "--data", p(&dir.path().join("empty")), "--out", p(&a)]).contains("empty"));
}

#[test]
fn spectrum_cases() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.ppm");
    ImageBuffer::new(16, 16, vec![128; 16 * 16 * 3]).unwrap().save(&flat).unwrap();
    let out = dir.path().join("s.csv");
    ok(&["spectrum", "--input", p(&flat), "--out", p(&out)]);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows[0][0], 0.0);
    assert!(rows[0][1] > 1.0);
    assert!(rows[1..].iter().all(|r| r[1].abs() < 1e-4));

    let g = dir.path().join("g.png");
    grating(64, 8).save(&g).unwrap();
    let cmp = dir.path().join("c.csv");
    ok(&["spectrum", "--input", p(&g), "--compare", p(&g), "--out", p(&cmp)]);
    let text = fs::read_to_string(&cmp).unwrap();
    assert!(text.starts_with("radius,log_amplitude,residual\n"));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.iter().all(|r| r[2] == 0.0));
    let peak = rows[1..].iter().max_by(|a, b| a[1].total_cmp(&b[1])).unwrap()[0];
    assert_eq!(peak, 8.0);

    let small = dir.path().join("small.ppm");
    grating(32, 2).save(&small).unwrap();
    assert!(fails(&["spectrum", "--input", p(&g), "--compare", p(&small), "--out", p(&cmp)]).contains("size mismatch"));
}

#[test]
fn thread_variable_is_validated() {
    let o = Command::new(env!("CARGO_BIN_EXE_craft"))
        .args(["spectrum", "--input", "x", "--out", "y"])
        .env("CRAFT_THREADS", "many")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("CRAFT_THREADS"));
    let bad_flag = fails(&["train", "--bogus"]);
    assert_eq!(bad_flag.lines().count(), 1);
}
