//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sspreid::cli::{fuse_dataset, run, Cli, SplitArg};
use sspreid::csvfmt;
use sspreid::{checkpoint, pnm, GalleryFile, RunManifest};
use sspreid_core::bench::{clustered_gallery, ClusterConfig};
use sspreid_core::fusion::{parsing_join_backward, saliency_join_backward};
use sspreid_core::losses::{cross_entropy_lsr_mixture, Reduction};
use sspreid_core::model::{
    self, synth_dataset, train_stream, BackboneConfig, BatchItem, LossMode, StreamKind,
    StreamModel, SynthConfig, TrainConfig,
};
use sspreid_core::retrieval::{average_precision_flags, rank_distances, EntryLabel};
use sspreid_core::{
    cross_entropy_lsr, distance_matrix, evaluate, evaluate_distances, losses, parsing_join, rerank,
    saliency_join, triplet_hard, DistanceMatrix, Error, GalleryEntry, GuidanceMap, ParsingMaps,
    Protocol, RerankConfig, Tensor, TripletBatch,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

struct OracleReport {
    map: f64,
    cmc: Vec<f64>,
    valid: usize,
    skipped: usize,
}

fn oracle_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        s += d * d;
    }
    s.sqrt()
}

/// Brute force: a candidate's 1-based rank is one plus the number of kept
/// candidates that precede it under (distance, gallery index) order.
fn oracle_evaluate(
    q: &[GalleryEntry<f32>],
    g: &[GalleryEntry<f32>],
    market: bool,
    max_rank: usize,
) -> Option<OracleReport> {
    let mut ap_sum = 0.0;
    let mut hits = vec![0usize; max_rank];
    let (mut valid, mut skipped) = (0, 0);
    for qe in q {
        let kept: Vec<usize> = (0..g.len())
            .filter(|&j| {
                !(market && g[j].person_id == qe.person_id && g[j].camera_id == qe.camera_id)
            })
            .collect();
        let d: Vec<f64> = g
            .iter()
            .map(|ge| oracle_distance(&qe.feature, &ge.feature))
            .collect();
        let mut positions: Vec<usize> = kept
            .iter()
            .filter(|&&j| g[j].person_id == qe.person_id)
            .map(|&j| {
                1 + kept
                    .iter()
                    .filter(|&&k| d[k] < d[j] || (d[k] == d[j] && k < j))
                    .count()
            })
            .collect();
        if positions.is_empty() {
            skipped += 1;
            continue;
        }
        positions.sort_unstable();
        valid += 1;
        let ap: f64 = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| (i + 1) as f64 / p as f64)
            .sum::<f64>()
            / positions.len() as f64;
        ap_sum += ap;
        for (r, h) in hits.iter_mut().enumerate() {
            if positions[0] <= r + 1 {
                *h += 1;
            }
        }
    }
    (valid > 0).then(|| OracleReport {
        map: ap_sum / valid as f64,
        cmc: hits.iter().map(|&h| h as f64 / valid as f64).collect(),
        valid,
        skipped,
    })
}

fn random_entries(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
    ids: u32,
    integer: bool,
) -> Vec<GalleryEntry<f32>> {
    (0..n)
        .map(|_| {
            let f = (0..dim)
                .map(|_| {
                    if integer {
                        rng.gen_range(0..3) as f32
                    } else {
                        rng.gen_range(-1.0..1.0)
                    }
                })
                .collect();
            GalleryEntry::new(rng.gen_range(0..ids), rng.gen_range(0..3), f)
        })
        .collect()
}

fn metric_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for inst in 0..200 {
        let (nq, ng) = if inst < 5 {
            (100, 1000)
        } else {
            (rng.gen_range(1..=100), rng.gen_range(1..=1000))
        };
        let dim = rng.gen_range(1..6);
        let ids = rng.gen_range(1..40);
        let integer = inst % 2 == 0;
        let q = random_entries(&mut rng, nq, dim, ids, integer);
        let g = random_entries(&mut rng, ng, dim, ids, integer);
        let market = rng.gen_bool(0.5);
        let protocol = if market {
            Protocol::Market
        } else {
            Protocol::None
        };
        let got = evaluate(&q, &g, protocol, 50);
        let want = oracle_evaluate(&q, &g, market, 50);
        match (got, want) {
            (Ok(r), Some(o)) => {
                ensure(
                    r.valid_queries == o.valid && r.skipped_queries == o.skipped,
                    || format!("instance {inst}: query counts differ"),
                )?;
                worst = worst.max((r.map - o.map).abs());
                for (a, b) in r.cmc.iter().zip(&o.cmc) {
                    worst = worst.max((a - b).abs());
                }
                compared += 1;
            }
            (Err(Error::NoValidQueries { .. }), None) => {}
            (g, w) => {
                return Err(format!(
                    "instance {inst}: evaluate {g:?} vs oracle valid={}",
                    w.is_some()
                ))
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "200 instances ({compared} scored), max |diff| {worst:e}, {secs:.1}s"
    ))
}

// ---------------------------------------------------------------- 2

fn hand_metrics() -> Outcome {
    let ap = average_precision_flags(&[true, false, true]).map_err(|e| e.to_string())?;
    // Exact up to the rounding of the two f64 quotients involved.
    ensure((ap - 5.0 / 6.0).abs() <= 2.0 * f64::EPSILON, || {
        format!("AP {ap}")
    })?;

    // Query 0 finds its match first, query 1 second.
    let dist = DistanceMatrix::new(2, 2, vec![0.1, 0.9, 0.2, 0.8]).unwrap();
    let gallery = [
        EntryLabel {
            person_id: 0,
            camera_id: 1,
        },
        EntryLabel {
            person_id: 1,
            camera_id: 1,
        },
    ];
    let queries = [
        EntryLabel {
            person_id: 0,
            camera_id: 0,
        },
        EntryLabel {
            person_id: 1,
            camera_id: 0,
        },
    ];
    let r = evaluate_distances(&dist, &queries, &gallery, Protocol::Market, 2)
        .map_err(|e| e.to_string())?;
    ensure(r.cmc == [0.5, 1.0], || format!("CMC {:?}", r.cmc))?;
    let hits: Vec<_> = (0..2)
        .map(|i| {
            rank_distances(i, queries[i], dist.row(i), &gallery, Protocol::Market)
                .unwrap()
                .first_hit()
        })
        .collect();
    ensure(hits == [Some(0), Some(1)], || {
        format!("first hits {hits:?}")
    })?;
    Ok(format!("AP={ap} CMC(1)={} CMC(2)={}", r.cmc[0], r.cmc[1]))
}

// ---------------------------------------------------------------- 3

const STEP: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn rand_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor<f64> {
    Tensor::new(
        h,
        w,
        c,
        (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn rand_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GuidanceMap {
    GuidanceMap::new(h, w, (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct GradStats {
    points: usize,
    worst: f64,
}

impl GradStats {
    fn new() -> Self {
        Self {
            points: 0,
            worst: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, fd: f64) {
        self.points += 1;
        self.worst = self.worst.max(rel_err(analytic, fd));
    }

    fn check(&self, name: &str, tol: f64) -> Result<String, String> {
        ensure(self.points >= 100 && self.worst < tol, || {
            format!(
                "{name}: {} points, worst rel err {:e} (tol {tol:e})",
                self.points, self.worst
            )
        })?;
        Ok(format!("{name} {}pts {:.1e}", self.points, self.worst))
    }
}

fn grad_ce(rng: &mut ChaCha8Rng) -> GradStats {
    let mut st = GradStats::new();
    while st.points < 120 {
        let k = rng.gen_range(2..10);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let class = rng.gen_range(0..k);
        let eps = rng.gen_range(0.0..0.5);
        let (_, grad) = cross_entropy_lsr(&logits, class, eps).unwrap();
        let i = rng.gen_range(0..k);
        let mut p = logits.clone();
        p[i] += STEP;
        let mut m = logits.clone();
        m[i] -= STEP;
        let fd = (cross_entropy_lsr(&p, class, eps).unwrap().0
            - cross_entropy_lsr(&m, class, eps).unwrap().0)
            / (2.0 * STEP);
        st.add(grad[i], fd);
    }
    st
}

fn grad_triplet(rng: &mut ChaCha8Rng) -> GradStats {
    let mut st = GradStats::new();
    while st.points < 120 {
        let (p, n, dim) = (
            rng.gen_range(2..4),
            rng.gen_range(2..4),
            rng.gen_range(2..6),
        );
        let emb: Vec<Vec<f64>> = (0..p * n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = |e: Vec<Vec<f64>>| {
            TripletBatch::new(p, n, e, 0.3)
                .unwrap()
                .with_reduction(Reduction::Mean)
        };
        let base = triplet_hard(&batch(emb.clone())).unwrap();
        if base.loss <= 0.0 {
            continue;
        }
        let (a, c) = (rng.gen_range(0..p * n), rng.gen_range(0..dim));
        let mut plus = emb.clone();
        plus[a][c] += STEP;
        let mut minus = emb;
        minus[a][c] -= STEP;
        let (op, om) = (
            triplet_hard(&batch(plus)).unwrap(),
            triplet_hard(&batch(minus)).unwrap(),
        );
        let sel = |o: &losses::TripletOutput<f64>| -> Vec<(usize, usize, bool)> {
            o.pairs
                .iter()
                .map(|h| (h.positive, h.negative, h.hinge > 0.0))
                .collect()
        };
        // Skip points where the mined pairs or active hinges change (kinks).
        if sel(&op) != sel(&base) || sel(&om) != sel(&base) {
            continue;
        }
        st.add(base.grads[a][c], (op.loss - om.loss) / (2.0 * STEP));
    }
    st
}

fn grad_join(rng: &mut ChaCha8Rng, parsing: bool) -> GradStats {
    let mut st = GradStats::new();
    while st.points < 120 {
        let (h, w, c) = (
            rng.gen_range(1..6),
            rng.gen_range(1..5),
            rng.gen_range(1..4),
        );
        let (mh, mw) = (rng.gen_range(1..8), rng.gen_range(1..6));
        let t = rand_tensor(rng, h, w, c);
        let sal = rand_map(rng, mh, mw);
        let labels: Vec<u8> = (0..mh * mw).map(|_| rng.gen_range(0..5)).collect();
        let pm = ParsingMaps::from_labels(mh, mw, &labels).unwrap();
        let out_len = if parsing { 5 * c } else { c };
        let probe: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |x: &Tensor<f64>| -> f64 {
            let v = if parsing {
                parsing_join(x, &pm).unwrap()
            } else {
                saliency_join(x, &sal).unwrap()
            };
            dot(&probe, &v)
        };
        let analytic = if parsing {
            parsing_join_backward(h, w, &pm, &probe).unwrap()
        } else {
            saliency_join_backward(h, w, &sal, &probe).unwrap()
        };
        for _ in 0..3 {
            let i = rng.gen_range(0..t.data().len());
            let mut p = t.clone();
            p.data_mut()[i] += STEP;
            let mut m = t.clone();
            m.data_mut()[i] -= STEP;
            st.add(analytic.data()[i], (f(&p) - f(&m)) / (2.0 * STEP));
        }
    }
    st
}

fn grad_stream(rng: &mut ChaCha8Rng, kind: StreamKind) -> GradStats {
    let bcfg = BackboneConfig {
        input_height: 12,
        input_width: 8,
        input_channels: 3,
        stage_channels: vec![3, 4, 5, 6],
        tap_stage: 2,
    };
    let images: Vec<Tensor<f64>> = (0..4).map(|_| rand_tensor(rng, 12, 8, 3)).collect();
    let sal: Vec<GuidanceMap> = (0..4).map(|_| rand_map(rng, 6, 4)).collect();
    let labels: Vec<u8> = (0..24).map(|_| rng.gen_range(0..5)).collect();
    let parsing = ParsingMaps::from_labels(6, 4, &labels).unwrap();
    let model = StreamModel::<f64>::init(kind, &bcfg, 2, rng.gen()).unwrap();
    let items: Vec<BatchItem<'_, f64>> = (0..4)
        .map(|i| BatchItem {
            image: &images[i],
            guides: model::Guides {
                saliency: &sal[i],
                parsing: &parsing,
            },
            class: i / 2,
        })
        .collect();
    let eval = |m: &StreamModel<f64>| {
        model::batch_objective(m, &items, 2, 2, 0.1, 0.3, LossMode::CrossPlusTriplet).unwrap()
    };
    let sel = |o: &model::Objective<f64>| -> Vec<(usize, usize, bool)> {
        o.hard_pairs
            .iter()
            .map(|p| (p.positive, p.negative, p.hinge > 0.0))
            .collect()
    };
    let base = eval(&model);
    let mut st = GradStats::new();
    while st.points < 110 {
        let b = rng.gen_range(0..base.grads.buffers.len());
        let i = rng.gen_range(0..base.grads.buffers[b].len());
        let mut plus = model.clone();
        plus.params_mut()[b][i] += STEP;
        let mut minus = model.clone();
        minus.params_mut()[b][i] -= STEP;
        let (op, om) = (eval(&plus), eval(&minus));
        if op.relu_pattern != base.relu_pattern
            || om.relu_pattern != base.relu_pattern
            || sel(&op) != sel(&base)
            || sel(&om) != sel(&base)
        {
            continue;
        }
        st.add(
            base.grads.buffers[b][i],
            (op.total() - om.total()) / (2.0 * STEP),
        );
    }
    st
}

fn gradient_checks() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut parts = vec![
        grad_ce(&mut rng).check("ce", 1e-4)?,
        grad_triplet(&mut rng).check("triplet", 1e-4)?,
        grad_join(&mut rng, false).check("saliency_join", 1e-3)?,
        grad_join(&mut rng, true).check("parsing_join", 1e-3)?,
    ];
    for kind in [StreamKind::Saliency, StreamKind::Parsing] {
        parts.push(grad_stream(&mut rng, kind).check(&format!("stream_{kind:?}"), 1e-3)?);
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{}, {secs:.1}s", parts.join(", ")))
}

// ---------------------------------------------------------------- 4

fn closed_forms() -> Outcome {
    let mut worst_uniform = 0.0f64;
    for k in [2usize, 3, 7, 10, 751] {
        for eps in [0.0, 0.1, 0.5, 1.0] {
            let (loss, _) = cross_entropy_lsr(&vec![0.37f64; k], 0, eps).unwrap();
            worst_uniform = worst_uniform.max((loss - (k as f64).ln()).abs());
        }
    }
    ensure(worst_uniform < 1e-12, || {
        format!("uniform logits off by {worst_uniform:e}")
    })?;

    let same = TripletBatch::new(2, 2, vec![vec![0.5f64, -1.0]; 4], 0.3).unwrap();
    let trip = triplet_hard(&same).unwrap().loss;
    ensure((trip - 1.2).abs() < 1e-12, || {
        format!("identical embeddings give {trip}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_mix = 0.0f64;
    for _ in 0..500 {
        let k = rng.gen_range(2..30);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let c = rng.gen_range(0..k);
        let eps = rng.gen_range(0.0..1.0);
        let a = cross_entropy_lsr(&logits, c, eps).unwrap().0;
        let b = cross_entropy_lsr_mixture(&logits, c, eps).unwrap();
        worst_mix = worst_mix.max((a - b).abs());
    }
    ensure(worst_mix < 1e-6, || {
        format!("decompositions differ by {worst_mix:e}")
    })?;
    Ok(format!(
        "ln K err {worst_uniform:.1e}, triplet {trip}, decomposition err {worst_mix:.1e}"
    ))
}

// ---------------------------------------------------------------- 5

fn fusion_dims() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let (h, w, c) = (
            rng.gen_range(1..10),
            rng.gen_range(1..10),
            rng.gen_range(1..40),
        );
        let (mh, mw) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let t = rand_tensor(&mut rng, h, w, c);
        let labels: Vec<u8> = (0..mh * mw).map(|_| rng.gen_range(0..5)).collect();
        let s = saliency_join(&t, &rand_map(&mut rng, mh, mw)).unwrap();
        let p = parsing_join(&t, &ParsingMaps::from_labels(mh, mw, &labels).unwrap()).unwrap();
        ensure(s.len() == c && p.len() == 5 * c, || {
            format!("c={c}: saliency {} parsing {}", s.len(), p.len())
        })?;
    }
    Ok("200 random (tensor, map) pairs: c and 5c".into())
}

// ---------------------------------------------------------------- 6

fn split_entries(
    data: &model::Dataset,
    s: Option<&StreamModel<f32>>,
    sp: Option<&StreamModel<f32>>,
) -> (Vec<GalleryEntry<f32>>, Vec<GalleryEntry<f32>>) {
    let q = fuse_dataset(data, SplitArg::Query, s, sp).unwrap().entries;
    let g = fuse_dataset(data, SplitArg::Gallery, s, sp)
        .unwrap()
        .entries;
    (q, g)
}

fn fusion_pattern() -> Outcome {
    let t0 = Instant::now();
    let mut rows = Vec::new();
    let (mut wins, mut sums) = (0, [0.0f64; 3]);
    for seed in 0..5u64 {
        let data = synth_dataset(&SynthConfig::new(20, 8, seed).with_image(64, 32))
            .map_err(|e| e.to_string())?;
        let bcfg = BackboneConfig::default().with_input(64, 32);
        let cfg = TrainConfig {
            epochs: 40,
            seed,
            ..TrainConfig::default()
        };
        let classes = data.train_ids().len();
        let mut models = Vec::new();
        for kind in [StreamKind::Saliency, StreamKind::Parsing] {
            let mut m =
                StreamModel::<f32>::init(kind, &bcfg, classes, kind.init_seed(seed)).unwrap();
            train_stream(&mut m, &data, &cfg).map_err(|e| e.to_string())?;
            models.push(m);
        }
        let score = |s: Option<&StreamModel<f32>>, sp: Option<&StreamModel<f32>>| {
            let (q, g) = split_entries(&data, s, sp);
            evaluate(&q, &g, Protocol::Market, 50).unwrap().map
        };
        let maps = [
            score(Some(&models[0]), None),
            score(None, Some(&models[1])),
            score(Some(&models[0]), Some(&models[1])),
        ];
        if maps[2] >= maps[0].max(maps[1]) - 0.01 {
            wins += 1;
        }
        for (s, m) in sums.iter_mut().zip(maps) {
            *s += m;
        }
        rows.push(format!(
            "seed{seed} S={:.3} SP={:.3} SSP={:.3}",
            maps[0], maps[1], maps[2]
        ));
    }
    let mean = sums.map(|s| s / 5.0);
    let detail = format!(
        "{}; wins {wins}/5, mean S={:.3} SP={:.3} SSP={:.3}, {:.0}s",
        rows.join(", "),
        mean[0],
        mean[1],
        mean[2],
        t0.elapsed().as_secs_f64()
    );
    ensure(wins >= 4 && mean[2] > mean[0].max(mean[1]), || {
        detail.clone()
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn exec(args: &[&str]) -> Result<String, String> {
    let mut full = vec!["sspreid"];
    full.extend_from_slice(args);
    let cli = Cli::try_parse_from(full).map_err(|e| e.to_string())?;
    let (mut out, mut err) = (Vec::new(), Vec::new());
    run(&cli, &mut out, &mut err).map_err(|e| e.to_string())?;
    Ok(String::from_utf8(out).unwrap())
}

fn report_map(report: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix("map: "))
        .unwrap()
        .parse()
        .unwrap()
}

fn ranking(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

fn rerank_property() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let (q, g) = clustered_gallery(&ClusterConfig::new(seed));
        let qp = tmp.path().join(format!("q{seed}.sspf"));
        let gp = tmp.path().join(format!("g{seed}.sspf"));
        GalleryFile::from_entries(q.clone())
            .unwrap()
            .save(&qp)
            .unwrap();
        GalleryFile::from_entries(g.clone())
            .unwrap()
            .save(&gp)
            .unwrap();
        let (qs, gs) = (qp.to_str().unwrap(), gp.to_str().unwrap());
        let base = report_map(&exec(&["eval", "--query", qs, "--gallery", gs])?);
        let rr = report_map(&exec(&[
            "eval",
            "--query",
            qs,
            "--gallery",
            gs,
            "--rerank",
        ])?);
        ensure(rr >= base, || {
            format!("seed {seed}: re-ranked mAP {rr:.4} < {base:.4}")
        })?;
        rows.push(format!("{base:.3}->{rr:.3}"));

        let qf: Vec<&[f32]> = q.iter().map(|e| e.feature.as_slice()).collect();
        let gf: Vec<&[f32]> = g.iter().map(|e| e.feature.as_slice()).collect();
        let cfg = RerankConfig {
            lambda: 1.0,
            ..RerankConfig::default()
        };
        let r1 = rerank::<f32, &[f32]>(&qf, &gf, &cfg).unwrap().distances;
        let orig = distance_matrix::<f32, &[f32]>(&qf, &gf).unwrap();
        for i in 0..orig.rows() {
            ensure(ranking(r1.row(i)) == ranking(orig.row(i)), || {
                format!("seed {seed}: lambda=1 changes the ranking of query {i}")
            })?;
        }
    }
    Ok(format!(
        "mAP {}; lambda=1 rankings identical",
        rows.join(", ")
    ))
}

// ---------------------------------------------------------------- 8

/// Runs synth, training, fusion and re-ranking inside `root` with relative
/// paths, so manifests from different roots are comparable byte for byte.
fn run_pipeline(root: &Path, threads: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let prev = std::env::current_dir().map_err(|e| e.to_string())?;
    std::env::set_current_dir(root).map_err(|e| e.to_string())?;
    let result = run_commands(threads);
    std::env::set_current_dir(prev).map_err(|e| e.to_string())?;
    result?;
    let mut files = Vec::new();
    for entry in walk(root) {
        let rel = entry
            .strip_prefix(root)
            .unwrap()
            .to_string_lossy()
            .into_owned();
        files.push((rel, std::fs::read(&entry).unwrap()));
    }
    files.sort();
    Ok(files)
}

fn run_commands(threads: &str) -> Result<(), String> {
    let p = |name: &str| name.to_string();
    let data = p("data");
    exec(&[
        "--seed", "11", "synth", "--out", &data, "--ids", "8", "--per-id", "4", "--height", "32",
        "--width", "16",
    ])?;
    for (stream, loss) in [("s", "cross_plus_triplet"), ("sp", "cross_only")] {
        exec(&[
            "--seed",
            "11",
            "--threads",
            threads,
            "train-toy",
            "--data",
            &data,
            "--stream",
            stream,
            "--checkpoint",
            &p(&format!("{stream}.sspm")),
            "--epochs",
            "3",
            "--batch-p",
            "2",
            "--batch-n",
            "2",
            "--loss",
            loss,
        ])?;
    }
    for split in ["query", "gallery"] {
        exec(&[
            "--threads",
            threads,
            "fuse",
            "--data",
            &data,
            "--stream",
            "ssp",
            "--s-checkpoint",
            &p("s.sspm"),
            "--sp-checkpoint",
            &p("sp.sspm"),
            "--split",
            split,
            "--out",
            &p(&format!("{split}.sspf")),
        ])?;
    }
    exec(&[
        "rerank",
        "--query",
        &p("query.sspf"),
        "--gallery",
        &p("gallery.sspf"),
        "--k1",
        "4",
        "--k2",
        "2",
        "--out",
        &p("rr.csv"),
    ])?;
    Ok(())
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn determinism_and_formats() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fa = run_pipeline(a.path(), "1")?;
    let fb = run_pipeline(b.path(), "3")?;
    ensure(fa.len() == fb.len(), || "different file sets".into())?;
    for ((na, ba), (nb, bb)) in fa.iter().zip(&fb) {
        ensure(na == nb && ba == bb, || {
            format!("{na} differs between runs")
        })?;
    }
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for must in [
        "s.sspm",
        "sp.sspm",
        "s.sspm.loss.csv",
        "sp.sspm.loss.csv",
        "query.sspf",
        "gallery.sspf",
    ] {
        ensure(names.contains(&must), || format!("{must} missing"))?;
    }

    // Every format: decode then encode reproduces the file bytes.
    let mut checked = 0;
    for (name, bytes) in &fa {
        let again: Vec<u8> = if name.ends_with(".sspf") {
            GalleryFile::decode(bytes)
                .map_err(|e| e.to_string())?
                .encode()
        } else if name.ends_with(".sspm") {
            checkpoint::encode(&checkpoint::decode(bytes).map_err(|e| e.to_string())?)
        } else if name.ends_with(".ppm") {
            pnm::encode_image(&pnm::decode_image(bytes).map_err(|e| e.to_string())?).unwrap()
        } else if name.starts_with("data/saliency/") {
            pnm::encode_saliency(&pnm::decode_saliency(bytes).map_err(|e| e.to_string())?)
        } else if name.starts_with("data/parsing/") {
            pnm::encode_parsing(&pnm::decode_parsing(bytes).map_err(|e| e.to_string())?)
        } else if name.ends_with(".loss.csv") {
            let text = std::str::from_utf8(bytes).unwrap();
            let mode = if text.starts_with("epoch,crosse,trip") {
                LossMode::CrossPlusTriplet
            } else {
                LossMode::CrossOnly
            };
            csvfmt::encode_curve(
                &csvfmt::decode_curve(text).map_err(|e| e.to_string())?,
                mode,
            )
            .into_bytes()
        } else if name.ends_with("split.csv") {
            csvfmt::encode_split(
                &csvfmt::decode_split(std::str::from_utf8(bytes).unwrap())
                    .map_err(|e| e.to_string())?,
            )
            .into_bytes()
        } else if name.ends_with("rr.csv") {
            csvfmt::encode_matrix(
                &csvfmt::decode_matrix(std::str::from_utf8(bytes).unwrap())
                    .map_err(|e| e.to_string())?,
            )
            .into_bytes()
        } else if name.ends_with("manifest.json") {
            RunManifest::from_json(std::str::from_utf8(bytes).unwrap())
                .map_err(|e| e.to_string())?
                .to_json()
                .into_bytes()
        } else {
            return Err(format!("unexpected output {name}"));
        };
        ensure(&again == bytes, || format!("{name} does not round-trip"))?;
        checked += 1;
    }
    Ok(format!(
        "{} files byte-identical across runs (1 vs 3 threads); {checked} round-trips exact",
        fa.len()
    ))
}

// ----------------------------------------------------------------

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("metric oracle equivalence", metric_oracle),
        ("hand-computed metric values", hand_metrics),
        ("gradient checks", gradient_checks),
        ("loss closed forms", closed_forms),
        ("fusion dimensionality", fusion_dims),
        ("fusion pattern over 5 seeds", fusion_pattern),
        ("re-ranking property", rerank_property),
        ("determinism and formats", determinism_and_formats),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|p| p == &n.to_string() || name.contains(p.as_str()))
        {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
