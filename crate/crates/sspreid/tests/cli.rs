use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use clap::Parser;
use sspreid::cli::{run, Cli};
use sspreid::csvfmt::decode_split;
use sspreid::{checkpoint, dataset, pnm, Error, ExitCode, GalleryFile, RunManifest};
use sspreid_core::model::{
    synth_dataset, BackboneConfig, Split, StreamKind, StreamModel, SynthConfig,
};
use sspreid_core::GalleryEntry;

fn exec(args: &[&str]) -> Result<String, Error> {
    let mut full = vec!["sspreid"];
    full.extend_from_slice(args);
    let cli = Cli::try_parse_from(full).expect("arguments parse");
    let mut out = Vec::new();
    let mut err = Vec::new();
    run(&cli, &mut out, &mut err)?;
    Ok(String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, ids: usize, per_id: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("data_{ids}_{per_id}_{seed}"));
    exec(&[
        "--seed",
        &seed.to_string(),
        "synth",
        "--out",
        s(&out),
        "--ids",
        &ids.to_string(),
        "--per-id",
        &per_id.to_string(),
        "--height",
        "32",
        "--width",
        "16",
    ])
    .unwrap();
    out
}

fn train(
    data: &Path,
    stream: &str,
    ckpt: &Path,
    epochs: &str,
    extra: &[&str],
) -> Result<String, Error> {
    let mut args = vec![
        "--seed",
        "5",
        "train-toy",
        "--data",
        s(data),
        "--stream",
        stream,
        "--checkpoint",
        s(ckpt),
        "--epochs",
        epochs,
        "--batch-p",
        "2",
        "--batch-n",
        "2",
    ];
    args.extend_from_slice(extra);
    exec(&args)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn synth_emits_counted_files_and_partition() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 5, 4, 1);
    for (sub, ext) in [("images", "ppm"), ("saliency", "pgm"), ("parsing", "pgm")] {
        let n = std::fs::read_dir(data.join(sub))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == ext)
            .count();
        assert_eq!(n, 20, "{sub}");
    }
    for e in std::fs::read_dir(data.join("parsing")).unwrap() {
        let raster = pnm::decode(pnm::Kind::Grey, &read(&e.unwrap().path())).unwrap();
        assert!(raster.pixels.iter().all(|&p| p <= 4));
    }
    let rows = decode_split(&String::from_utf8(read(&data.join("split.csv"))).unwrap()).unwrap();
    assert_eq!(rows.len(), 20);
    let mut names: Vec<_> = rows.iter().map(|r| r.name.clone()).collect();
    names.dedup();
    assert_eq!(names.len(), 20);
    let train_ids: Vec<u32> = rows
        .iter()
        .filter(|r| r.split == Split::Train)
        .map(|r| r.person_id)
        .collect();
    assert!(rows
        .iter()
        .filter(|r| r.split != Split::Train)
        .all(|r| !train_ids.contains(&r.person_id)));
    assert!(rows.iter().any(|r| r.split == Split::Query));
    assert!(rows.iter().any(|r| r.split == Split::Gallery));
    let m = RunManifest::load(&data.join("manifest.json")).unwrap();
    assert_eq!((m.command.as_str(), m.seed), ("synth", 1));
}

#[test]
fn dataset_directory_round_trips_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SynthConfig::new(4, 3, 9).with_image(32, 16);
    let data = synth_dataset(&cfg).unwrap();
    dataset::write(tmp.path(), &data).unwrap();
    let back = dataset::load(tmp.path()).unwrap();
    assert_eq!(back.samples, data.samples);
}

#[test]
fn zero_epochs_keeps_initialisation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 6, 4, 2);
    let ckpt = tmp.path().join("s.sspm");
    train(&data, "s", &ckpt, "0", &[]).unwrap();
    let loaded = checkpoint::load(&ckpt).unwrap();
    let init = StreamModel::<f32>::init(
        StreamKind::Saliency,
        &BackboneConfig::default().with_input(32, 16),
        3,
        StreamKind::Saliency.init_seed(5),
    )
    .unwrap();
    assert_eq!(loaded, init);
    let curve = std::fs::read_to_string(tmp.path().join("s.sspm.loss.csv")).unwrap();
    assert_eq!(curve, "epoch,crosse,trip,lr\n");
}

#[test]
fn loss_mode_controls_trip_column_and_runs_repeat() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 6, 4, 3);
    let a = tmp.path().join("a.sspm");
    let b = tmp.path().join("b.sspm");
    let c = tmp.path().join("c.sspm");
    train(&data, "sp", &a, "2", &[]).unwrap();
    train(&data, "sp", &b, "2", &["--threads", "1"]).unwrap();
    train(&data, "sp", &c, "2", &["--loss", "cross_only"]).unwrap();
    let ca = std::fs::read_to_string(tmp.path().join("a.sspm.loss.csv")).unwrap();
    let cb = std::fs::read_to_string(tmp.path().join("b.sspm.loss.csv")).unwrap();
    let cc = std::fs::read_to_string(tmp.path().join("c.sspm.loss.csv")).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(read(&a), read(&b));
    assert!(ca.starts_with("epoch,crosse,trip,lr\n"));
    assert!(cc.starts_with("epoch,crosse,lr\n"));
    assert_eq!(ca.lines().count(), 3);
    let ma = std::fs::read_to_string(tmp.path().join("a.sspm.manifest.json")).unwrap();
    let m = RunManifest::from_json(&ma).unwrap();
    assert_eq!(m.config["loss"], "cross_plus_triplet");
    assert_eq!(m.inputs.len(), 1);
}

#[test]
fn fuse_counts_dims_and_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    // 3 test identities with 3 images each: one query per identity.
    let data = synth(tmp.path(), 6, 3, 4);
    let sc = tmp.path().join("s.sspm");
    let spc = tmp.path().join("sp.sspm");
    train(&data, "s", &sc, "1", &[]).unwrap();
    train(&data, "sp", &spc, "1", &[]).unwrap();
    let fuse = |stream: &str, out: &Path| {
        exec(&[
            "fuse",
            "--data",
            s(&data),
            "--stream",
            stream,
            "--s-checkpoint",
            s(&sc),
            "--sp-checkpoint",
            s(&spc),
            "--split",
            "query",
            "--out",
            s(out),
        ])
        .unwrap();
        GalleryFile::load(out).unwrap()
    };
    let ssp = fuse("ssp", &tmp.path().join("ssp.sspf"));
    let only_s = fuse("s", &tmp.path().join("s.sspf"));
    let only_sp = fuse("sp", &tmp.path().join("sp.sspf"));
    assert_eq!(ssp.len(), 3);
    assert_eq!(only_s.dim, 128 + 64);
    assert_eq!(only_sp.dim, 128 + 5 * 64);
    assert_eq!(ssp.dim, only_s.dim + only_sp.dim);
    let again = fuse("ssp", &tmp.path().join("ssp2.sspf"));
    assert_eq!(
        read(&tmp.path().join("ssp.sspf")),
        read(&tmp.path().join("ssp2.sspf"))
    );
    assert_eq!(again, ssp);
    let m1 = std::fs::read_to_string(tmp.path().join("ssp.sspf.manifest.json")).unwrap();
    let m2 = RunManifest::from_json(&m1).unwrap();
    assert_eq!(m2.inputs.len(), 3);
    assert_eq!(RunManifest::from_json(&m2.to_json()).unwrap(), m2);
}

#[test]
fn fuse_lists_every_bad_input_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), 4, 2, 5);
    let sc = tmp.path().join("s.sspm");
    train(&data, "s", &sc, "0", &[]).unwrap();
    std::fs::remove_file(data.join("images/00001.ppm")).unwrap();
    std::fs::write(data.join("parsing/00002.pgm"), b"P5\n4 4\n255\n\x09").unwrap();
    let out = tmp.path().join("f.sspf");
    let err = exec(&[
        "fuse",
        "--data",
        s(&data),
        "--stream",
        "s",
        "--s-checkpoint",
        s(&sc),
        "--out",
        s(&out),
    ])
    .unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Inputs(ref v) if v.len() == 2), "{msg}");
    assert!(
        msg.contains("00001.ppm") && msg.contains("00002.pgm"),
        "{msg}"
    );
    assert!(!out.exists());
}

fn write_gallery(path: &Path, entries: Vec<GalleryEntry<f32>>) {
    GalleryFile::from_entries(entries)
        .unwrap()
        .save(path)
        .unwrap();
}

#[test]
fn eval_self_retrieval_and_report_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g.sspf");
    write_gallery(
        &g,
        (0..6)
            .map(|i| GalleryEntry::new(i / 2, 0, vec![i as f32, (i * i) as f32]))
            .collect(),
    );
    let report = exec(&[
        "eval",
        "--query",
        s(&g),
        "--gallery",
        s(&g),
        "--protocol",
        "none",
        "--max-rank",
        "3",
    ])
    .unwrap();
    let keys: Vec<&str> = report
        .lines()
        .map(|l| l.split(':').next().unwrap())
        .collect();
    assert_eq!(
        keys,
        [
            "map",
            "rank1",
            "cmc[1]",
            "cmc[2]",
            "cmc[3]",
            "valid_queries",
            "skipped_queries"
        ]
    );
    assert!(report.contains("rank1: 1\n"));

    let out = tmp.path().join("report.txt");
    let r2 = exec(&[
        "eval",
        "--query",
        s(&g),
        "--gallery",
        s(&g),
        "--protocol",
        "none",
        "--max-rank",
        "3",
        "--rerank",
        "--k1",
        "4",
        "--k2",
        "2",
        "--lambda",
        "1",
        "--out",
        s(&out),
    ])
    .unwrap();
    assert!(r2.contains("rank1: 1\n"));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), r2);
    let m = RunManifest::load(&tmp.path().join("report.txt.manifest.json")).unwrap();
    assert_eq!(m.config["rerank_flags"]["k1"], 4);
}

#[test]
fn rerank_writes_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let q = tmp.path().join("q.sspf");
    let g = tmp.path().join("g.sspf");
    write_gallery(
        &q,
        vec![
            GalleryEntry::new(0, 0, vec![0.0, 0.0]),
            GalleryEntry::new(1, 0, vec![5.0, 5.0]),
        ],
    );
    write_gallery(
        &g,
        (0..8)
            .map(|i| GalleryEntry::new(i % 2, 1, vec![(i % 2) as f32 * 5.0 + i as f32 * 0.01, 0.0]))
            .collect(),
    );
    let out = tmp.path().join("m.csv");
    exec(&[
        "rerank",
        "--query",
        s(&q),
        "--gallery",
        s(&g),
        "--k1",
        "3",
        "--k2",
        "2",
        "--out",
        s(&out),
    ])
    .unwrap();
    let m = sspreid::csvfmt::decode_matrix(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((m.rows(), m.cols()), (2, 8));
    assert!(m.data().iter().all(|&d| d >= 0.0));
    assert!(tmp.path().join("m.csv.manifest.json").exists());
}

#[test]
fn dump_prints_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tmp.path().join("g.sspf");
    write_gallery(&g, vec![GalleryEntry::new(3, 1, vec![0.5, -2.0])]);
    assert_eq!(
        exec(&["dump", "--input", s(&g)]).unwrap(),
        "# count=1 dim=2\n3 1 0.5 -2\n"
    );
}

fn bin(args: &[&str]) -> std::process::Output {
    Proc::new(env!("CARGO_BIN_EXE_sspreid"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("g.sspf");
    write_gallery(
        &good,
        vec![
            GalleryEntry::new(0, 0, vec![1.0]),
            GalleryEntry::new(1, 0, vec![2.0]),
        ],
    );
    let bad = tmp.path().join("bad.sspf");
    let mut bytes = read(&good);
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&bad, bytes).unwrap();

    let ok = bin(&[
        "eval",
        "--query",
        s(&good),
        "--gallery",
        s(&good),
        "--protocol",
        "none",
    ]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with("map: "));

    let fmt = bin(&["eval", "--query", s(&bad), "--gallery", s(&good)]);
    assert_eq!(fmt.status.code(), Some(ExitCode::Format as i32));
    assert!(String::from_utf8_lossy(&fmt.stderr).contains("magic"));

    let args = bin(&["eval", "--query", s(&good)]);
    assert_eq!(args.status.code(), Some(ExitCode::Argument as i32));
    let lambda = bin(&[
        "eval",
        "--query",
        s(&good),
        "--gallery",
        s(&good),
        "--rerank",
        "--lambda",
        "2",
    ]);
    assert_eq!(lambda.status.code(), Some(ExitCode::Argument as i32));

    // Every gallery entry shares the query's identity and camera.
    let proto = bin(&["eval", "--query", s(&good), "--gallery", s(&good)]);
    assert_eq!(proto.status.code(), Some(ExitCode::Protocol as i32));

    let missing = bin(&[
        "eval",
        "--query",
        s(&tmp.path().join("nope.sspf")),
        "--gallery",
        s(&good),
    ]);
    assert_eq!(missing.status.code(), Some(ExitCode::Other as i32));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));
}
