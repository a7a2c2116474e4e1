use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use xsep_core::patchwork::{separate_single_scale, PatchGridSpec};
use xsep_core::separator::BPConfig;
use xsep_core::storage::{load_dictionaries, read_image, read_matrix, write_image};
use xsep_core::synthbench::SimulatedPanel;
use xsep_core::ImagePlane;

fn xsep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xsep"))
        .args(args)
        .env_remove("XSEP_THREADS")
        .output()
        .expect("run xsep")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stderr:\n{}", stderr(out));
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Two 40x40 training panels plus a held-out one, all as PGM.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        for k in 0..2u64 {
            let p = SimulatedPanel::generate(40, 40, 20 + k).unwrap();
            write_image(&p.y1, &dir.path().join(format!("y{k}.pgm"))).unwrap();
            write_image(&p.x1, &dir.path().join(format!("x{k}.pgm"))).unwrap();
        }
        let panel = SimulatedPanel::generate(40, 40, 3).unwrap();
        for (name, img) in [("m", &panel.m), ("v1", &panel.y1), ("v2", &panel.y2)] {
            write_image(img, &dir.path().join(format!("{name}.pgm"))).unwrap();
        }
        Self { dir }
    }

    fn path(&self, name: &str) -> String {
        self.dir.path().join(name).to_str().unwrap().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (visual, xray, out) = (
            format!("{},{}", self.path("y0.pgm"), self.path("y1.pgm")),
            format!("{},{}", self.path("x0.pgm"), self.path("x1.pgm")),
            self.path(out),
        );
        let mut args = vec![
            "train",
            "--visual",
            &visual,
            "--xray",
            &xray,
            "--out",
            &out,
            "--patch",
            "4",
            "--atoms",
            "25",
            "--sz",
            "3",
            "--sv",
            "2",
            "--iters",
            "4",
            "--samples",
            "1500",
            "--eps",
            "2,4",
        ];
        args.extend_from_slice(extra);
        xsep(&args)
    }

    fn separate(&self, dicts: &str, out: &str, extra: &[&str]) -> Output {
        let (m, v1, v2) = (self.path("m.pgm"), self.path("v1.pgm"), self.path("v2.pgm"));
        let (o1, o2) = (
            self.path(&format!("{out}1.pgm")),
            self.path(&format!("{out}2.pgm")),
        );
        let mut args = vec![
            "separate",
            "--mixture",
            &m,
            "--visual1",
            &v1,
            "--visual2",
            &v2,
            "--dict",
            dicts,
            "--out1",
            &o1,
            "--out2",
            &o2,
            "--eps",
            "2,4",
            "--raw",
        ];
        args.extend_from_slice(extra);
        xsep(&args)
    }
}

fn bytes(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn dictionary_files(dir: &Path, stem: &str) -> Vec<PathBuf> {
    ["_psi_c.cdlm", "_phi_c.cdlm", "_phi.cdlm"]
        .iter()
        .map(|s| dir.join(format!("{stem}{s}")))
        .collect()
}

#[test]
fn train_is_deterministic_and_writes_a_manifest() {
    let f = Fixture::new();
    assert_code(&f.train("a.ini", &[]), 0);
    assert_code(&f.train("b.ini", &["--threads", "1"]), 0);
    let (dict, meta) = load_dictionaries(Path::new(&f.path("a.ini"))).unwrap();
    assert_eq!(
        (dict.n(), dict.gamma(), dict.d(), meta.scale, meta.weighted),
        (16, 25, 25, 1, false)
    );
    for (a, b) in dictionary_files(f.dir.path(), "a")
        .iter()
        .zip(dictionary_files(f.dir.path(), "b"))
    {
        assert_eq!(bytes(a), bytes(b));
    }
}

#[test]
fn weighted_with_all_ones_masks_matches_plain_training() {
    let f = Fixture::new();
    let ones = ImagePlane::filled(40, 40, 255.0);
    write_image(&ones, &f.dir.path().join("ones.pgm")).unwrap();
    let masks = format!("{},{}", f.path("ones.pgm"), f.path("ones.pgm"));
    assert_code(&f.train("plain.ini", &[]), 0);
    assert_code(
        &f.train("weighted.ini", &["--weighted", "--mask", &masks]),
        0,
    );
    let (_, meta) = load_dictionaries(Path::new(&f.path("weighted.ini"))).unwrap();
    assert!(meta.weighted);
    for (a, b) in dictionary_files(f.dir.path(), "plain")
        .iter()
        .zip(dictionary_files(f.dir.path(), "weighted"))
    {
        let (a, b) = (read_matrix(a).unwrap(), read_matrix(&b).unwrap());
        assert!((a - b).amax() <= 1e-9);
    }
}

#[test]
fn weighted_training_rejects_thin_rows() {
    let f = Fixture::new();
    let out = f.train("w.ini", &["--weighted", "--samples", "40"]);
    assert_code(&out, 3);
    assert!(stderr(&out).contains("gamma + d = 50"), "{}", stderr(&out));
}

#[test]
fn argument_and_data_errors_have_distinct_codes() {
    let f = Fixture::new();
    let out = xsep(&[
        "train",
        "--visual",
        &f.path("y0.pgm"),
        "--xray",
        &f.path("x0.pgm"),
        &f.path("x1.pgm"),
    ]);
    assert_code(&out, 2);
    let mismatched = format!("{},{}", f.path("x0.pgm"), f.path("x1.pgm"));
    let out = xsep(&[
        "train",
        "--visual",
        &f.path("y0.pgm"),
        "--xray",
        &mismatched,
        "--out",
        &f.path("d.ini"),
    ]);
    assert_code(&out, 2);
    std::fs::write(f.dir.path().join("bad.pgm"), b"P5\n4 4\n255\n\x00\x01").unwrap();
    let out = xsep(&[
        "train",
        "--visual",
        &f.path("bad.pgm"),
        "--xray",
        &f.path("x0.pgm"),
        "--out",
        &f.path("d.ini"),
    ]);
    assert_code(&out, 3);
    assert!(stderr(&out).contains("byte"), "{}", stderr(&out));
}

#[test]
fn constant_images_are_a_numerical_failure() {
    let f = Fixture::new();
    let flat = ImagePlane::filled(40, 40, 90.0);
    write_image(&flat, &f.dir.path().join("flat.pgm")).unwrap();
    let out = xsep(&[
        "train",
        "--visual",
        &f.path("flat.pgm"),
        "--xray",
        &f.path("flat.pgm"),
        "--out",
        &f.path("d.ini"),
        "--patch",
        "4",
        "--atoms",
        "16",
        "--sz",
        "2",
        "--sv",
        "2",
        "--iters",
        "2",
        "--samples",
        "500",
    ]);
    assert_code(&out, 4);
}

#[test]
fn single_scale_separation_matches_the_library() {
    let f = Fixture::new();
    assert_code(&f.train("d.ini", &[]), 0);
    let (dict, _) = load_dictionaries(Path::new(&f.path("d.ini"))).unwrap();
    let read = |n: &str| read_image(Path::new(&f.path(n))).unwrap();
    let (m, v1, v2) = (read("m.pgm"), read("v1.pgm"), read("v2.pgm"));
    let spec = PatchGridSpec::new(4, 2).unwrap();
    for (tag, include_v) in [("with", true), ("without", false)] {
        let extra: &[&str] = if include_v { &["--include-v"] } else { &[] };
        assert_code(&f.separate(&f.path("d.ini"), tag, extra), 0);
        let lib = separate_single_scale(&m, &v1, &v2, &dict, spec, &BPConfig::default(), include_v)
            .unwrap();
        assert_eq!(read(&format!("{tag}1.cdlm")), lib.x1);
        assert_eq!(read(&format!("{tag}2.cdlm")), lib.x2);
    }
    assert_ne!(bytes(f.path("with1.cdlm")), bytes(f.path("without1.cdlm")));
}

#[test]
fn multiscale_falls_back_to_the_deepest_dictionary() {
    let f = Fixture::new();
    assert_code(&f.train("d.ini", &[]), 0);
    let dump = f.path("pyr");
    let out = f.separate(
        &f.path("d.ini"),
        "ms",
        &["--multiscale", "2", "--dump-pyramid", &dump],
    );
    assert_code(&out, 0);
    assert!(
        stderr(&out).contains("scale=2 dictionary=missing using_scale=1"),
        "{}",
        stderr(&out)
    );
    for name in ["low_1", "low_2", "low_3", "high_1", "high_2"] {
        assert!(f
            .dir
            .path()
            .join("pyr")
            .join(format!("{name}.cdlm"))
            .exists());
    }
    let out = f.separate(&f.path("d.ini"), "ms", &["--multiscale", "3"]);
    assert_code(&out, 2);
}

#[test]
fn second_scale_training_and_multiscale_run() {
    let f = Fixture::new();
    assert_code(&f.train("s1.ini", &[]), 0);
    assert_code(
        &f.train(
            "s2.ini",
            &["--scale", "2", "--samples", "200", "--atoms", "16"],
        ),
        0,
    );
    let (_, meta) = load_dictionaries(Path::new(&f.path("s2.ini"))).unwrap();
    assert_eq!(meta.scale, 2);
    let dicts = format!("{},{}", f.path("s2.ini"), f.path("s1.ini"));
    let out = f.separate(&dicts, "ms", &["--multiscale", "2"]);
    assert_code(&out, 0);
    assert!(!stderr(&out).contains("dictionary=missing"));
    assert!(stderr(&out).contains("patches="));
}

#[test]
fn config_file_supplies_flags() {
    let f = Fixture::new();
    assert_code(
        &f.train("flags.ini", &["--seed", "5", "--init", "random"]),
        0,
    );
    let cfg = f.dir.path().join("run.ini");
    std::fs::write(
        &cfg,
        "[xsep]\nthreads = 1\n[train]\nseed = 5\ninit = random\nsv = 9\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap().to_string();
    assert_code(&f.train("cfg.ini", &["--config", &cfg]), 0);
    for (a, b) in dictionary_files(f.dir.path(), "flags")
        .iter()
        .zip(dictionary_files(f.dir.path(), "cfg"))
    {
        assert_eq!(bytes(a), bytes(b));
    }
    std::fs::write(f.dir.path().join("bad.ini"), "[train]\nseed = lots\n").unwrap();
    assert_code(&f.train("x.ini", &["--config", &f.path("bad.ini")]), 2);
}

#[test]
fn table_benchmarks_emit_csv() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--n", "8", "--gamma", "10", "--d", "10", "--t", "200", "--trials", "1", "--iters", "5",
    ];
    let run = |table: &str, snr: &str, name: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "bench",
            table,
            "--snr",
            snr,
            "--mixtures",
            "10",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(&small);
        assert_code(&xsep(&args), 0);
        std::fs::read_to_string(out).unwrap()
    };
    let t1 = run("table1", "inf", "t1.csv");
    let lines: Vec<&str> = t1.lines().collect();
    assert_eq!(lines[0], "snr_db,dict,recovery_pct");
    assert_eq!(lines.len(), 4);
    assert_eq!(run("table1", "inf", "t1b.csv"), t1);
    let t2 = run("table2", "inf,40", "t2.csv");
    let lines: Vec<&str> = t2.lines().collect();
    assert_eq!(lines[0], "snr_db,side,nmse");
    assert_eq!(lines.len(), 5);
    assert!(lines[3].starts_with("40,x1,"));
    let out = xsep(&["bench", "table1", "--snr", "-3"]);
    assert_code(&out, 2);
}

#[test]
fn mix_bench_on_identical_sides() {
    let f = Fixture::new();
    let csv = f.path("mix.csv");
    let a = f.path("v1.pgm");
    let out = xsep(&[
        "bench",
        "mix",
        "--simulated-mix",
        &a,
        &a,
        "--size",
        "32",
        "--atoms",
        "24",
        "--iters",
        "3",
        "--train-panels",
        "1",
        "--trained-scales",
        "1",
        "--steps",
        "2,4",
        "--out",
        &csv,
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(
        rows[0],
        [
            "method",
            "psnr_x1",
            "psnr_x2",
            "ssim_x1",
            "ssim_x2",
            "low_band_energy"
        ]
    );
    assert_eq!(
        rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
        ["method", "truth", "naive", "single_scale", "multiscale"]
    );
    assert_eq!(rows[2][1], "inf");
    assert_eq!(rows[2][2], "inf");
    for row in &rows[3..] {
        let v: Vec<f64> = row[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert!((v[0] - v[1]).abs() <= 1e-3 * v[0], "{row:?}");
        assert!((v[2] - v[3]).abs() <= 1e-6, "{row:?}");
        assert!(v[4] < 1e-9, "{row:?}");
    }
}

#[test]
fn thread_count_from_environment() {
    let f = Fixture::new();
    let run = |threads: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_xsep"))
            .args([
                "bench", "table1", "--n", "8", "--gamma", "10", "--d", "10", "--t", "100",
                "--trials", "2",
            ])
            .args(["--iters", "3", "--out", out])
            .env("XSEP_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_code(&run("1", &f.path("a.csv")), 0);
    assert_code(&run("2", &f.path("b.csv")), 0);
    assert_eq!(bytes(f.path("a.csv")), bytes(f.path("b.csv")));
    assert_code(&run("many", &f.path("c.csv")), 2);
}

#[test]
fn atom_moves_train_deterministically_and_reject_weighting() {
    let f = Fixture::new();
    let moves = ["--atom-moves", "--iters", "25"];
    assert_code(&f.train("a.ini", &moves), 0);
    assert_code(
        &f.train("b.ini", &[&moves[..], &["--threads", "1"]].concat()),
        0,
    );
    for (a, b) in dictionary_files(f.dir.path(), "a")
        .iter()
        .zip(dictionary_files(f.dir.path(), "b"))
    {
        assert_eq!(bytes(a), bytes(b));
    }
    assert_code(&f.train("c.ini", &["--atom-moves", "--weighted"]), 2);
}
