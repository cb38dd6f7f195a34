//! Drive the compiled `mcq` binary end to end on a temp workspace.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcq::Image;

fn mcq_bin() -> &'static str {
    env!("CARGO_BIN_EXE_mcq")
}

fn run(args: &[&str]) -> Output {
    Command::new(mcq_bin())
        .args(args)
        .output()
        .expect("spawning mcq")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Deterministic 16-image gray corpus with mixed gradients and texture.
fn write_corpus(dir: &Path) -> Vec<PathBuf> {
    let mut paths = Vec::new();
    for i in 0..16u32 {
        let (w, h) = (24usize, 20usize);
        let samples = (0..w * h)
            .map(|p| {
                let (x, y) = ((p % w) as u32, (p / w) as u32);
                ((x * (3 + i) + y * (5 + i) + i * 17) % 256) as u8
            })
            .collect();
        let img = Image::new(w, h, 1, samples).unwrap();
        let path = dir.join(format!("img{i:02}.ppm"));
        img.write_ppm(&path).unwrap();
        paths.push(path);
    }
    paths
}

fn write_tiny_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("tiny.spec");
    fs::write(
        &spec,
        "name = tiny\ntransform = patchify\npatch = 4\nchannels = 1\n\
         levels = 1\ngroups = 2\ncodewords = 16\n",
    )
    .unwrap();
    spec
}

#[test]
fn train_compress_decompress_inspect_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    let images = write_corpus(&corpus);
    let spec = write_tiny_spec(dir.path());
    let book = dir.path().join("tiny.mcqb");

    let start = std::time::Instant::now();
    assert_ok(&run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        book.to_str().unwrap(),
        "--epochs",
        "10",
        "--seed",
        "3",
    ]));
    assert!(
        start.elapsed().as_secs() < 60,
        "training smoke run too slow"
    );
    assert!(book.exists());
    assert!(dir.path().join("tiny.trace.csv").exists());
    let trace = fs::read_to_string(dir.path().join("tiny.trace.csv")).unwrap();
    assert!(trace.starts_with("# schema: mcq.loss.v1\nepoch,loss,temperature,lr\n"));

    let stream = dir.path().join("img.mcq");
    let out = run(&[
        "compress",
        images[0].to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--codebook",
        book.to_str().unwrap(),
        "--out",
        stream.to_str().unwrap(),
        "--report",
    ]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["schema"], "mcq.compress.v1");
    assert!(report["bpp"].as_f64().unwrap() > 0.0);

    let restored = dir.path().join("restored.ppm");
    assert_ok(&run(&[
        "decompress",
        stream.to_str().unwrap(),
        "--codebook",
        book.to_str().unwrap(),
        "--out",
        restored.to_str().unwrap(),
    ]));
    let img = Image::read_ppm(&restored).unwrap();
    assert_eq!((img.width, img.height), (24, 20));

    let out = run(&["inspect", stream.to_str().unwrap()]);
    assert_ok(&out);
    let info: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(info["schema"], "mcq.inspect.v1");
    assert_eq!(info["width"], 24);
    assert_eq!(info["levels"], 1);
    assert_eq!(info["codewords_per_level"][0], 16);
}

#[test]
fn divergent_training_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    write_corpus(&corpus);
    let spec = write_tiny_spec(dir.path());
    let book = dir.path().join("boom.mcqb");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        book.to_str().unwrap(),
        "--lr-initial",
        "1e9",
        "--lr-final",
        "1e9",
        "--epochs",
        "30",
        "--seed",
        "1",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(!book.exists());
}

#[test]
fn trains_from_a_latent_dump_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_tiny_spec(dir.path());
    // 8 grids of 6x6x16 latents, matching the spec's p=4 gray transform.
    let mut rng_state = 123456789u64;
    let mut next = move || {
        rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
        (rng_state >> 33) as f64 / (1u64 << 31) as f64 - 1.0
    };
    let corpus: Vec<mcq::LatentGrid> = (0..8)
        .map(|_| mcq::LatentGrid::new(6, 6, 16, (0..6 * 6 * 16).map(|_| next()).collect()).unwrap())
        .collect();
    let dump = dir.path().join("corpus.mcql");
    mcq::trainer::write_latent_dump(&dump, &corpus).unwrap();
    let book = dir.path().join("fromdump.mcqb");
    assert_ok(&run(&[
        "train",
        "--corpus",
        dump.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        book.to_str().unwrap(),
        "--algorithm",
        "kmeans",
        "--epochs",
        "5",
        "--seed",
        "2",
    ]));
    let books = mcq::MultiCodebook::load(&book).unwrap();
    assert_eq!(books.levels(), 1);
    assert_eq!(books.groups, 2);
    assert_eq!(books.codewords_per_level(), vec![16]);
}

#[test]
fn empty_corpus_fails_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty");
    fs::create_dir(&corpus).unwrap();
    let spec = write_tiny_spec(dir.path());
    let book = dir.path().join("never.mcqb");
    let out = run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        book.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(!book.exists());
    // No stray temp files either.
    let leftovers: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains("tmp"))
        .collect();
    assert!(leftovers.is_empty(), "leftover temp files: {leftovers:?}");
}

#[test]
fn training_is_byte_identical_for_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    write_corpus(&corpus);
    let spec = write_tiny_spec(dir.path());
    let mut books = Vec::new();
    for name in ["a.mcqb", "b.mcqb"] {
        let book = dir.path().join(name);
        assert_ok(&run(&[
            "train",
            "--corpus",
            corpus.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            book.to_str().unwrap(),
            "--epochs",
            "6",
            "--seed",
            "42",
            "--threads",
            "1",
        ]));
        books.push(fs::read(&book).unwrap());
    }
    assert_eq!(books[0], books[1]);
}

#[test]
fn decompress_rejects_wrong_codebook() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    let images = write_corpus(&corpus);
    let spec = write_tiny_spec(dir.path());
    for (book, seed) in [("a.mcqb", "1"), ("b.mcqb", "2")] {
        assert_ok(&run(&[
            "train",
            "--corpus",
            corpus.to_str().unwrap(),
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            dir.path().join(book).to_str().unwrap(),
            "--epochs",
            "4",
            "--seed",
            seed,
        ]));
    }
    let stream = dir.path().join("img.mcq");
    assert_ok(&run(&[
        "compress",
        images[1].to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--codebook",
        dir.path().join("a.mcqb").to_str().unwrap(),
        "--out",
        stream.to_str().unwrap(),
    ]));
    let out_path = dir.path().join("no.ppm");
    let out = run(&[
        "decompress",
        stream.to_str().unwrap(),
        "--codebook",
        dir.path().join("b.mcqb").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("digest"));
    assert!(!out_path.exists());
}

#[test]
fn perturb_fraction_zero_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    let images = write_corpus(&corpus);
    let spec = write_tiny_spec(dir.path());
    let book = dir.path().join("tiny.mcqb");
    assert_ok(&run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        book.to_str().unwrap(),
        "--epochs",
        "4",
        "--seed",
        "9",
    ]));
    let stream = dir.path().join("img.mcq");
    assert_ok(&run(&[
        "compress",
        images[2].to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--codebook",
        book.to_str().unwrap(),
        "--out",
        stream.to_str().unwrap(),
    ]));
    let out_stream = dir.path().join("zero.mcq");
    let out = run(&[
        "perturb",
        stream.to_str().unwrap(),
        "--codebook",
        book.to_str().unwrap(),
        "--fraction",
        "0",
        "--out",
        out_stream.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["changed"], 0);
    assert_eq!(fs::read(&stream).unwrap(), fs::read(&out_stream).unwrap());
}

#[test]
fn sweep_emits_mean_and_se_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    fs::create_dir(&corpus).unwrap();
    let images = write_corpus(&corpus);
    // Sweep wants its codebook path inside the spec file.
    let spec = dir.path().join("swept.spec");
    fs::write(
        &spec,
        "name = swept\ntransform = patchify\npatch = 4\nchannels = 1\n\
         levels = 1\ngroups = 2\ncodewords = 16\ncodebook = swept.mcqb\n",
    )
    .unwrap();
    assert_ok(&run(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("swept.mcqb").to_str().unwrap(),
        "--epochs",
        "4",
        "--seed",
        "5",
    ]));
    let csv_path = dir.path().join("rd.csv");
    assert_ok(&run(&[
        "sweep",
        "--images",
        images[0].to_str().unwrap(),
        images[1].to_str().unwrap(),
        images[2].to_str().unwrap(),
        "--specs",
        spec.to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]));
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("# schema: mcq.sweep.v1\n"));
    assert_eq!(csv.lines().filter(|l| l.contains("(mean)")).count(), 1);
    assert_eq!(
        csv.lines().filter(|l| l.contains("(jackknife_se)")).count(),
        1
    );
    // 3 image rows + schema + header + 2 summary rows.
    assert_eq!(csv.lines().count(), 7);
}
