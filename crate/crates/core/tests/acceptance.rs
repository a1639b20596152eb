//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::LN_2;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fishreid::appearance::{js_divergence, HueHistogram};
use fishreid::dataset::Dataset;
use fishreid::evaluation::{
    frame_qms_counts, mean_average_precision, CameraPair, EvalReport, FrameRecord, MatchRecord, PairStats,
    QmsCounts, RankedQuery,
};
use fishreid::geometry::LocationMetric;
use fishreid::pipeline::{all_combinations, evaluate_folds, format_records, run, PipelineConfig};
use fishreid::report::format_report;
use fishreid::simulator::{random_scene, render, standard_rig, NoiseSpec, RandomSceneParams, Scenario};
use fishreid::{
    fuse, greedy_match, hungarian_match, normalize, CameraId, Feature, Identity, MatchProbabilityMatrix,
    Orientation, Polarity, ScoreMatrix, Temperature,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // some exact zeros to exercise the 0·ln 0 convention
    let mut v: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let total: f64 = v.iter().sum();
    v.iter().map(|x| x / total).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn divergence_suite() -> Check {
    let hist = |p: Vec<f64>| HueHistogram::from_probabilities(p, 1).map_err(|e| e.to_string());
    let js = |a: &HueHistogram, b: &HueHistogram| js_divergence(a, b).map_err(|e| e.to_string());

    let worked = js(&hist(vec![0.5, 0.5])?, &hist(vec![1.0, 0.0])?)?;
    ensure!((worked - 0.215762).abs() <= 1e-6, "worked example gave {worked}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in 0..10_000 {
        let len = rng.random_range(2..=64);
        let p = random_distribution(&mut rng, len);
        let q = random_distribution(&mut rng, len);
        let (hp, hq) = (hist(p.clone())?, hist(q.clone())?);
        let pq = js(&hp, &hq)?;
        let qp = js(&hq, &hp)?;
        ensure!(pq == qp, "pair {n}: asymmetric {pq} vs {qp}");
        ensure!((0.0..=LN_2).contains(&pq), "pair {n}: {pq} outside [0, ln 2]");
        let mid: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
        let oracle = (entropy(&mid) - 0.5 * (entropy(&p) + entropy(&q))).clamp(0.0, LN_2);
        ensure!(
            (pq - oracle).abs() <= 1e-12,
            "pair {n}: {pq} vs entropy form {oracle}"
        );
        if p != q {
            ensure!(pq > 0.0, "pair {n}: distinct distributions at divergence 0");
        }
        ensure!(js(&hp, &hp)? == 0.0, "pair {n}: self-divergence not 0");
    }
    Ok(format!("10000 pairs, worked example {worked:.7}"))
}

fn random_scores(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (ScoreMatrix, Polarity) {
    if rng.random_bool(0.5) {
        let v = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = ScoreMatrix::new(
            Array2::from_shape_vec((rows, cols), v).unwrap(),
            Polarity::Similarity,
            Feature::Dl,
        );
        (m.unwrap(), Polarity::Similarity)
    } else {
        let v = (0..rows * cols).map(|_| rng.random_range(0.0..400.0)).collect();
        let m = ScoreMatrix::new(
            Array2::from_shape_vec((rows, cols), v).unwrap(),
            Polarity::Dissimilarity,
            Feature::Loc,
        );
        (m.unwrap(), Polarity::Dissimilarity)
    }
}

fn softmax_suite() -> Check {
    let t10 = Temperature::new(10.0).unwrap();
    let worked = ScoreMatrix::new(
        Array2::from_shape_vec((1, 2), vec![1.0, 0.0]).unwrap(),
        Polarity::Similarity,
        Feature::Dl,
    )
    .unwrap();
    let p = normalize(&worked, t10, Orientation::QueryRows).map_err(|e| e.to_string())?;
    let (a, b) = (p.values()[[0, 0]], p.values()[[0, 1]]);
    ensure!(
        (a - 0.52498).abs() < 5e-6 && (b - 0.47502).abs() < 5e-6,
        "worked example gave ({a}, {b})"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in 0..10_000 {
        let rows = rng.random_range(1..=20);
        let cols = rng.random_range(1..=20);
        let (s, polarity) = random_scores(&mut rng, rows, cols);
        let t = Temperature::new(rng.random_range(0.05..50.0)).unwrap();
        let p = normalize(&s, t, Orientation::QueryRows).map_err(|e| e.to_string())?;
        for (r, row) in p.values().rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            ensure!((sum - 1.0).abs() <= 1e-9, "matrix {n} row {r} sums to {sum}");
            let scores = s.values().row(r);
            for i in 0..cols {
                for j in 0..cols {
                    let better = match polarity {
                        Polarity::Similarity => scores[i] > scores[j],
                        Polarity::Dissimilarity => scores[i] < scores[j],
                    };
                    ensure!(
                        !better || row[i] >= row[j],
                        "matrix {n} row {r}: order violated at ({i}, {j})"
                    );
                }
            }
        }
        let shift = rng.random_range(0.0..100.0);
        let shifted = ScoreMatrix::new(s.values().mapv(|x| x + shift), s.polarity(), s.feature()).unwrap();
        let ps = normalize(&shifted, t, Orientation::QueryRows).map_err(|e| e.to_string())?;
        let diff = (ps.values() - p.values())
            .iter()
            .fold(0.0f64, |m, d| m.max(d.abs()));
        ensure!(
            diff <= 1e-9,
            "matrix {n}: shift by {shift} moved probabilities by {diff}"
        );
    }
    Ok(format!("10000 matrices, worked example ({a:.5}, {b:.5})"))
}

fn fusion_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Temperature::new(0.5).unwrap();
    for n in 0..1_000 {
        let rows = rng.random_range(1..=12);
        let cols = rng.random_range(1..=12);
        let (s, _) = random_scores(&mut rng, rows, cols);
        let s = ScoreMatrix::new(s.values().mapv(|x| x / 40.0), s.polarity(), s.feature()).unwrap();
        let p = normalize(&s, t, Orientation::QueryRows).map_err(|e| e.to_string())?;
        let fused = fuse(&[
            p.clone(),
            MatchProbabilityMatrix::uniform(rows, cols, Orientation::QueryRows),
        ])
        .map_err(|e| e.to_string())?;
        let a = greedy_match(&p);
        let b = greedy_match(&fused);
        ensure!(
            a.pairs == b.pairs,
            "matrix {n}: {:?} became {:?}",
            a.pairs,
            b.pairs
        );
    }
    Ok("1000 matrices".into())
}

fn brute_force(m: &Array2<f64>) -> f64 {
    fn rec(m: &Array2<f64>, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == m.nrows() {
            *best = best.max(acc);
            return;
        }
        for c in 0..m.ncols() {
            if !used[c] {
                used[c] = true;
                rec(m, row + 1, used, acc + m[[row, c]].ln(), best);
                used[c] = false;
            }
        }
    }
    // enumerate over the shorter side
    let m = if m.nrows() > m.ncols() {
        m.t().to_owned()
    } else {
        m.clone()
    };
    let mut best = f64::NEG_INFINITY;
    rec(&m, 0, &mut vec![false; m.ncols()], 0.0, &mut best);
    best
}

fn matching_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for n in 0..500 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        let v = (0..rows * cols).map(|_| rng.random_range(0.001..1.0)).collect();
        let m = MatchProbabilityMatrix::new(
            Array2::from_shape_vec((rows, cols), v).unwrap(),
            Orientation::QueryRows,
        )
        .map_err(|e| e.to_string())?;
        let h = hungarian_match(&m);
        let g = greedy_match(&m);
        let oracle = brute_force(m.values());
        ensure!(
            h.pairs.len() == rows.min(cols),
            "instance {n}: {} pairs",
            h.pairs.len()
        );
        let err = (h.log_probability - oracle).abs();
        worst = worst.max(err);
        ensure!(
            err <= 1e-9,
            "instance {n}: hungarian {} vs exhaustive {oracle}",
            h.log_probability
        );
        ensure!(
            g.log_probability <= h.log_probability,
            "instance {n}: greedy {} above hungarian {}",
            g.log_probability,
            h.log_probability
        );
    }
    Ok(format!("500 instances, max deviation {worst:.1e}"))
}

fn geometry_round_trip() -> Check {
    let (_, cameras) = standard_rig();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let max_theta = 85f64.to_radians();
    let mut worst = 0.0f64;
    for cam in &cameras {
        for n in 0..10_000 {
            let elevation = rng.random_range(0.0..200.0);
            let theta = rng.random_range(0.0..max_theta);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let rho = (cam.mounting_height - elevation) * theta.tan();
            let world = (
                cam.position[0] + rho * phi.cos(),
                cam.position[1] + rho * phi.sin(),
            );
            let px = cam.world_to_pixel(world, elevation).map_err(|e| e.to_string())?;
            let back = cam.pixel_to_world(px, elevation).map_err(|e| e.to_string())?;
            let err = (back.0 - world.0).hypot(back.1 - world.1);
            worst = worst.max(err);
            ensure!(err <= 1e-6, "camera {} point {n}: error {err} cm", cam.id);
        }
    }
    Ok(format!(
        "{} cameras x 10000 points, max error {worst:.1e} cm",
        cameras.len()
    ))
}

fn zero_noise_end_to_end() -> Check {
    let spec = random_scene(&RandomSceneParams {
        people: 5,
        frames: 100,
        seed: 6,
        noise: NoiseSpec::default(),
        ..RandomSceneParams::default()
    })
    .map_err(|e| e.to_string())?;
    ensure!(spec.cameras.len() == 3, "{} cameras", spec.cameras.len());
    let data = render(&spec).map_err(|e| e.to_string())?;
    let mut configs = Vec::new();
    for combo in all_combinations() {
        for metric in [LocationMetric::Ppd, LocationMetric::Cbd] {
            if metric == LocationMetric::Cbd && !combo.contains(&Feature::Loc) {
                continue;
            }
            configs.push(PipelineConfig {
                loc_metric: metric,
                ..PipelineConfig::default().with_features(&combo)
            });
        }
    }
    let mut possible = 0;
    for config in &configs {
        let (report, _) = evaluate_folds(&data, data.folds.as_ref(), config).map_err(|e| e.to_string())?;
        let cum = report.pooled().cumulative();
        let label = config.combination_label();
        ensure!(cum.qms.possible > 0, "{label}: nothing to match");
        ensure!(
            cum.qms.value() == 1.0,
            "{label}: QMS {}/{}",
            cum.qms.correct,
            cum.qms.possible
        );
        ensure!(cum.ap.value() == 1.0, "{label}: mAP {}", cum.ap.value());
        possible = cum.qms.possible;
    }
    Ok(format!(
        "{} configurations, {possible} matchable queries each",
        configs.len()
    ))
}

fn ambiguity_ordering() -> Check {
    let singles = [Feature::Dl, Feature::Ch, Feature::Loc];
    let base = Scenario::pipeline_config();
    let mut summary = Vec::new();
    for scenario in Scenario::ALL {
        // pooled counts: DL, CH, LOC, fused
        let mut totals = [QmsCounts::default(); 4];
        for seed in 0..100 {
            let data = render(&scenario.spec(seed)).map_err(|e| e.to_string())?;
            let mut values = [0.0; 4];
            for (k, features) in singles
                .iter()
                .map(|f| vec![*f])
                .chain([Feature::ALL.to_vec()])
                .enumerate()
            {
                let (report, _) =
                    evaluate_folds(&data, None, &base.with_features(&features)).map_err(|e| e.to_string())?;
                let c = report.pooled().cumulative().qms;
                totals[k].correct += c.correct;
                totals[k].possible += c.possible;
                values[k] = c.value();
            }
            let best_single = values[..3].iter().copied().fold(0.0, f64::max);
            ensure!(
                values[3] >= best_single,
                "{} seed {seed}: fused {} below best single {best_single}",
                scenario.name(),
                values[3]
            );
        }
        let v: Vec<f64> = totals.iter().map(|c| c.value()).collect();
        let best_single = v[..3].iter().copied().fold(0.0, f64::max);
        ensure!(
            v[3] >= best_single,
            "{}: pooled fused {} below {best_single}",
            scenario.name(),
            v[3]
        );
        if scenario == Scenario::Combined {
            ensure!(
                v[3] > best_single,
                "combined: fused {} not above best single {best_single}",
                v[3]
            );
        }
        summary.push(format!(
            "{} DL {:.3} CH {:.3} LOC {:.3} fused {:.3}",
            scenario.name(),
            v[0],
            v[1],
            v[2],
            v[3]
        ));
    }
    Ok(summary.join("; "))
}

fn metric_exactness() -> Check {
    let ids = |l: &[&str]| l.iter().map(|s| Identity::new(*s).unwrap()).collect::<Vec<_>>();
    // a -> a, b -> an unlabeled gallery entry, c unmatched
    let c = frame_qms_counts(&ids(&["a", "b", "c"]), &ids(&["a", "b", "x"]), &[(0, 0), (1, 2)])
        .map_err(|e| e.to_string())?;
    ensure!(c.value() == 0.5, "3-query/2-gallery QMS {}", c.value());
    let c = frame_qms_counts(&ids(&["a", "b", "c"]), &ids(&["a", "b"]), &[(0, 0), (2, 1)])
        .map_err(|e| e.to_string())?;
    ensure!(c.value() == 0.5, "3-query/2-gallery QMS (c -> b) {}", c.value());

    let record = |g: &str, q: &[&str], gal: &[&str], pairs: &[(usize, usize)]| FrameRecord {
        combination: "DL".into(),
        fold: 0,
        frame: 0,
        query_cam: CameraId::new("C1"),
        gallery_cam: CameraId::new(g),
        orientation: Orientation::QueryRows,
        log_probability: 0.0,
        query_ids: ids(q),
        gallery_ids: ids(gal),
        matches: pairs
            .iter()
            .map(|&(query, gallery)| MatchRecord {
                query,
                gallery,
                probability: 0.5,
            })
            .collect(),
        rankings: vec![(0..gal.len()).collect(); q.len()],
    };
    let mut report = EvalReport::default();
    report
        .add_frame(&record("C2", &["a"], &["a"], &[(0, 0)]))
        .map_err(|e| e.to_string())?;
    report
        .add_frame(&record(
            "C3",
            &["a", "b", "c"],
            &["a", "c", "b"],
            &[(0, 0), (1, 1), (2, 2)],
        ))
        .map_err(|e| e.to_string())?;
    let cum = report.cumulative().qms;
    ensure!(
        cum == QmsCounts {
            correct: 2,
            possible: 4
        },
        "cumulative counts {cum:?}"
    );
    ensure!(cum.value() == 0.5, "cumulative QMS {}", cum.value());
    let pair = |g: &str| CameraPair::new(CameraId::new("C1"), CameraId::new(g));
    let per: Vec<&PairStats> = [pair("C2"), pair("C3")]
        .iter()
        .map(|p| &report.per_pair[p])
        .collect();
    let mean_of_pairs = (per[0].qms.value() + per[1].qms.value()) / 2.0;
    ensure!(
        mean_of_pairs != cum.value(),
        "fixture does not separate pooled from averaged"
    );

    let one = mean_average_precision(&[RankedQuery {
        ranking: vec![1, 0, 2],
        correct: Some(0),
    }])
    .map_err(|e| e.to_string())?;
    ensure!(one.value() == 0.5, "rank-2 mAP {}", one.value());
    let two = mean_average_precision(&[
        RankedQuery {
            ranking: vec![0, 1, 2, 3],
            correct: Some(0),
        },
        RankedQuery {
            ranking: vec![0, 1, 2, 3],
            correct: Some(3),
        },
        RankedQuery {
            ranking: vec![0, 1, 2, 3],
            correct: None,
        },
    ])
    .map_err(|e| e.to_string())?;
    ensure!(two.value() == 0.625, "ranks 1 and 4 mAP {}", two.value());
    Ok("QMS 0.5, cumulative 2/4, mAP 0.5 and 0.625".into())
}

fn simulate_and_run(dir: &std::path::Path) -> std::result::Result<(Vec<u8>, Vec<u8>), String> {
    let spec = random_scene(&RandomSceneParams {
        seed: 9,
        frames: 30,
        noise: NoiseSpec {
            bbox_center_px: 10.0,
            embedding: 0.2,
            histogram_samples: 80,
        },
        ..RandomSceneParams::default()
    })
    .map_err(|e| e.to_string())?;
    render(&spec)
        .map_err(|e| e.to_string())?
        .write_dir(dir)
        .map_err(|e| e.to_string())?;
    let data = Dataset::load_dir(dir).map_err(|e| e.to_string())?;
    let configs: Vec<PipelineConfig> = all_combinations()
        .iter()
        .map(|c| PipelineConfig::default().with_features(c))
        .collect();
    let out = run(&data, &configs).map_err(|e| e.to_string())?;
    Ok((
        format_report(&out.reports).into_bytes(),
        format_records(&out.records).into_bytes(),
    ))
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (report_a, records_a) = simulate_and_run(a.path())?;
    let (report_b, records_b) = simulate_and_run(b.path())?;
    ensure!(report_a == report_b, "reports differ");
    ensure!(records_a == records_b, "records differ");
    for name in [
        "detections.jsonl",
        "cameras.toml",
        "embeddings.txt",
        "histograms.txt",
        "folds.txt",
    ] {
        let x = std::fs::read(a.path().join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(name)).map_err(|e| e.to_string())?;
        ensure!(x == y, "{name} differs");
    }
    Ok(format!("report {} bytes identical", report_a.len()))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, u64, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("divergence suite", 5, divergence_suite),
        ("softmax suite", 10, softmax_suite),
        ("fusion invariance", 5, fusion_invariance),
        ("matching oracle", 30, matching_oracle),
        ("geometry round-trip", 5, geometry_round_trip),
        ("zero-noise end-to-end", 60, zero_noise_end_to_end),
        ("ambiguity ordering", 300, ambiguity_ordering),
        ("metric exactness", 5, metric_exactness),
        ("determinism", 60, determinism),
    ];
    let mut failures = 0;
    for (name, budget_s, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let budget = Duration::from_secs(budget_s);
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget_s} s budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} {name}: {detail} [{:.2} s / {budget_s} s]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
