use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use weatherflow::model::Checkpoint;
use weatherflow::wdt;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weatherflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "image_size": 16,
  "d_model": 16,
  "n_layers": 1,
  "n_heads": 2,
  "mlp_ratio": 2,
  "maa_queries": 2,
  "maa_enc_channels": [4, 4, 8],
  "batch": 2,
  "steps": 10,
  "warmup": 2,
  "checkpoint_every": 5,
  "seed": 3
}
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new(count: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.json"), TINY).unwrap();
        let f = Fixture { dir };
        ok(&["gen-data", "--config", s(&f.config()), "--out", s(&f.data()), "--count", &count.to_string()]);
        f
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn config(&self) -> PathBuf {
        self.path("run.json")
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn scene(&self, i: usize) -> PathBuf {
        self.data().join(format!("scene_{i:06}"))
    }

    fn train(&self, task: &str, out: &str) -> PathBuf {
        let o = self.path(out);
        let printed = ok(&[
            "train", "--task", task, "--config", s(&self.config()), "--data", s(&self.data()), "--out", s(&o),
        ]);
        PathBuf::from(printed.trim())
    }
}

/// Relative path and contents of every file under `root`, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn help_documents_every_flag() {
    let cases: [(&str, &[&str]); 5] = [
        ("gen-data", &["--config", "--out", "--count", "--seed", "--previews"]),
        ("train", &["--task", "--config", "--data", "--out", "--steps", "--seed", "--resume"]),
        ("infer", &["--task", "--ckpt", "--input", "--weather", "--targets", "--maps", "--steps", "--seed", "--out"]),
        ("eval", &["--pred-dir", "--gt-dir", "--out"]),
        ("heatmap", &["--ckpt", "--input", "--map", "--out"]),
    ];
    for (cmd, flags) in cases {
        let help = ok(&[cmd, "--help"]);
        for f in flags {
            assert!(help.contains(f), "{cmd} help lacks {f}");
        }
    }
    let top = ok(&["--help"]);
    assert!(top.contains("Exit codes") && top.contains("WEATHERFLOW_THREADS"));
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, TINY).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["gen-data", "--config", s(&cfg), "--out", s(out), "--count", "3", "--seed", "9", "--previews"]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(p, _)| p.ends_with("albedo.png")));
    assert_eq!(ta, tb);

    let c = dir.path().join("c");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&c), "--count", "3", "--seed", "10"]);
    let image = |root: &Path| fs::read(root.join("scene_000000/image.wdt")).unwrap();
    assert_ne!(image(&a), image(&c));
}

#[test]
fn gen_data_accepts_zero_scenes() {
    let f = Fixture::new(0);
    let manifest = fs::read_to_string(f.data().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"count\": 0"));
    assert_eq!(tree(&f.data()).len(), 1);
}

#[test]
fn configuration_errors_exit_2() {
    let f = Fixture::new(1);
    let bad = f.path("bad.json");
    fs::write(&bad, r#"{"image_size": 15}"#).unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&bad), "--out", s(&f.path("x")), "--count", "1"]), 2);
    fs::write(&bad, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(code(&["gen-data", "--config", s(&bad), "--out", s(&f.path("x")), "--count", "1"]), 2);
    let ckpt = f.train("ir", "ir");
    let out = run(&[
        "infer", "--task", "ir", "--ckpt", s(&ckpt), "--input", s(&f.scene(0)), "--weather", "hail", "--out",
        s(&f.path("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sunny"));
    assert_eq!(code(&["train", "--task", "ir", "--config", s(&f.config()), "--data", s(&f.data())]), 2);
}

#[test]
fn missing_files_exit_3() {
    let f = Fixture::new(1);
    assert_eq!(code(&["train", "--task", "ir", "--data", s(&f.path("nope")), "--out", s(&f.path("o"))]), 3);
    assert_eq!(
        code(&["infer", "--task", "ir", "--ckpt", s(&f.path("none.wck")), "--input", s(&f.scene(0)), "--weather", "snow", "--out", s(&f.path("o"))]),
        3
    );
    let empty = f.path("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&["eval", "--pred-dir", s(&empty), "--gt-dir", s(&f.data()), "--out", s(&f.path("r.csv"))]), 3);
}

#[test]
fn mismatched_checkpoints_exit_4() {
    let f = Fixture::new(2);
    let ir = f.train("ir", "ir");
    let o = f.path("o");
    assert_eq!(code(&["infer", "--task", "fr", "--ckpt", s(&ir), "--input", s(&f.scene(0)), "--weather", "snow", "--out", s(&o)]), 4);

    let big = f.path("big.json");
    fs::write(&big, TINY.replace("\"image_size\": 16", "\"image_size\": 32")).unwrap();
    let other = f.path("other");
    ok(&["gen-data", "--config", s(&big), "--out", s(&other), "--count", "1"]);
    let input = other.join("scene_000000");
    assert_eq!(code(&["infer", "--task", "ir", "--ckpt", s(&ir), "--input", s(&input), "--weather", "snow", "--out", s(&o)]), 4);
    assert_eq!(code(&["heatmap", "--ckpt", s(&ir), "--input", s(&input), "--map", "metallic", "--out", s(&o)]), 4);
}

#[test]
fn training_is_reproducible_and_task_specific() {
    let f = Fixture::new(4);
    let ir = f.train("ir", "ir");
    let again = f.train("ir", "ir2");
    assert_eq!(fs::read(&ir).unwrap(), fs::read(&again).unwrap());
    let loss = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.parent().unwrap().join("loss.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(loss(&ir).len(), 10);
    assert_eq!(loss(&ir), loss(&again));
    assert!(f.path("ir").join("ckpt_0000005.wck").exists());

    let ckpt = Checkpoint::load(&ir).unwrap();
    assert_eq!(ckpt.step, 10);
    assert!(ckpt.model.params.names().any(|n| n.starts_with("maa.")));
    let fr = Checkpoint::load(&f.train("fr", "fr")).unwrap();
    assert!(!fr.model.params.names().any(|n| n.starts_with("maa.")));
}

#[test]
fn resumed_training_matches_a_single_run() {
    let f = Fixture::new(4);
    let full = f.train("ir", "full");
    let half = f.path("half");
    ok(&["train", "--task", "ir", "--config", s(&f.config()), "--data", s(&f.data()), "--out", s(&half), "--steps", "4"]);
    let rest = f.path("rest");
    ok(&[
        "train", "--task", "ir", "--config", s(&f.config()), "--data", s(&f.data()), "--out", s(&rest), "--resume",
        s(&half.join("model.wck")),
    ]);
    assert_eq!(fs::read(full).unwrap(), fs::read(rest.join("model.wck")).unwrap());
}

#[test]
fn inference_writes_maps_and_images() {
    let f = Fixture::new(2);
    let ir = f.train("ir", "ir");
    let o1 = f.path("ir_out1");
    let o2 = f.path("ir_out2");
    for o in [&o1, &o2] {
        ok(&[
            "infer", "--task", "ir", "--ckpt", s(&ir), "--input", s(&f.scene(1)), "--weather", "foggy", "--targets",
            "albedo,normal", "--steps", "3", "--seed", "5", "--out", s(o),
        ]);
    }
    let t = tree(&o1);
    let names: Vec<String> = t.iter().map(|(p, _)| p.display().to_string()).collect();
    assert_eq!(names, ["albedo.png", "albedo.wdt", "normal.png", "normal.wdt"]);
    assert_eq!(t, tree(&o2));
    assert_eq!(wdt::read(&o1.join("albedo.wdt")).unwrap().shape(), &[16, 16, 3]);

    let fr = f.train("fr", "fr");
    let maps = f.path("maps");
    fs::create_dir_all(&maps).unwrap();
    for m in ["albedo", "normal", "roughness"] {
        fs::copy(f.scene(0).join(format!("{m}.wdt")), maps.join(format!("{m}.wdt"))).unwrap();
    }
    let o3 = f.path("fr_out");
    ok(&["infer", "--task", "fr", "--ckpt", s(&fr), "--input", s(&maps), "--weather", "4", "--steps", "3", "--out", s(&o3)]);
    assert_eq!(wdt::read(&o3.join("image.wdt")).unwrap().shape(), &[16, 16, 3]);
    assert!(o3.join("image.png").exists());
}

#[test]
fn eval_scores_pairs_and_warns_on_orphans() {
    let f = Fixture::new(2);
    let pred = f.path("pred");
    for i in 0..2 {
        let d = pred.join(format!("scene_{i:06}"));
        fs::create_dir_all(&d).unwrap();
        for m in ["albedo", "normal"] {
            fs::copy(f.scene(i).join(format!("{m}.wdt")), d.join(format!("{m}.wdt"))).unwrap();
        }
    }
    fs::create_dir_all(pred.join("scene_000007")).unwrap();
    let csv = f.path("report/metrics.csv");
    let out = run(&["eval", "--pred-dir", s(&pred), "--gt-dir", s(&f.data()), "--out", s(&csv)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene_000007"));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("map,metric,value,n\n"));
    assert!(text.contains("albedo,psnr_db,inf,2\n"));
    assert!(text.contains("albedo,ssim,1,2\n"));
    assert!(text.contains("normal,mae_deg,0,2\n"));
}

#[test]
fn heatmap_is_a_distribution_over_patches() {
    let f = Fixture::new(2);
    let ir = f.train("ir", "ir");
    let o = f.path("hm");
    ok(&["heatmap", "--ckpt", s(&ir), "--input", s(&f.scene(0)), "--map", "metallic", "--out", s(&o)]);
    let h = wdt::read(&o.join("heatmap_metallic.wdt")).unwrap();
    assert_eq!(h.shape(), &[2, 2, 1]);
    let sum: f32 = h.data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-5, "{sum}");
    assert!(o.join("heatmap_metallic.png").exists());
    let fr = f.train("fr", "fr");
    assert_eq!(code(&["heatmap", "--ckpt", s(&fr), "--input", s(&f.scene(0)), "--map", "metallic", "--out", s(&o)]), 4);
}
