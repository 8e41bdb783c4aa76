//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use segrefine::bundle::{self, BundleSpec};
use segrefine::config::PipelineConfig;
use segrefine::io;
use segrefine::pipeline::{run_pipeline, RunOptions};
use segrefine_core::densecrf::{
    build_features, crf_refine, gaussian_filter_exact, meanfield_step, CrfParams, DenseCrf, FeatureKind, FeatureSet,
    FilterBackend, PermutohedralLattice,
};
use segrefine_core::ensemble::{average_probs, vote, EnsembleConfig, TieBreak};
use segrefine_core::metrics::{
    accumulate, iou_per_class, iou_ratios, miou, render_report, ConfusionMatrix, EvalReport, ReportFormat, StageRow,
};
use segrefine_core::morphology::{connected_components, remove_small_components, Connectivity};
use segrefine_core::synth::{corrupt_to_probs, derive_seed, generate_scene, SceneSpec};
use segrefine_core::{argmax_labels, unary_from_probs, LabelMap, ProbMap, IGNORE_LABEL};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const SEED: u64 = 0x5eed;

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run_cases<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Outcome {
    runner(cases).run(&strategy, test).map(|()| format!("{cases} cases")).map_err(|e| e.to_string())
}

fn small_scene(i: usize, side: usize, classes: usize) -> SceneSpec {
    SceneSpec {
        height: side,
        width: side,
        num_classes: classes,
        num_seeds: 5,
        rng_seed: derive_seed(SEED, i as u64),
        ..SceneSpec::default()
    }
}

fn nrmse(a: &[f32], b: &[f32]) -> f64 {
    let (mut err, mut norm) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        err += f64::from(x - y).powi(2);
        norm += f64::from(*y).powi(2);
    }
    (err / norm).sqrt()
}

/// Filters `values` and divides by the filtered all-ones field.
fn normalized(values: &[f32], channels: usize, filter: impl Fn(&[f32], usize) -> Vec<f32>) -> Vec<f32> {
    let out = filter(values, channels);
    let norm = filter(&vec![1.0; values.len() / channels], 1);
    out.chunks(channels).zip(norm).flat_map(|(row, n)| row.iter().map(move |v| v / n).collect::<Vec<_>>()).collect()
}

fn filtering() -> Outcome {
    let start = Instant::now();
    let params = CrfParams::default();
    let mut worst = [0.0f64; 2];
    let scenes = 24;
    for i in 0..scenes {
        let side = 8 + i % 9;
        let spec = small_scene(i, side, 4);
        let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
        let probs =
            corrupt_to_probs(&scene.gt, &SceneSpec { noise_flip_rate: 0.3, ..spec }).map_err(|e| e.to_string())?;
        for (slot, kind) in [FeatureKind::Smoothness, FeatureKind::Appearance].into_iter().enumerate() {
            let f = build_features(&scene.image, kind, &params).map_err(|e| e.to_string())?;
            let lattice = PermutohedralLattice::new(&f);
            let approx = normalized(probs.data(), 4, |v, c| lattice.filter(v, c).unwrap());
            let exact = normalized(probs.data(), 4, |v, c| gaussian_filter_exact(&f, v, c).unwrap());
            worst[slot] = worst[slot].max(nrmse(&approx, &exact));
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "{scenes} scenes 8x8..16x16, worst NRMSE d=2 {:.4}, d=5 {:.4} (limit 0.15), {:.2?} (limit 5s)",
        worst[0], worst[1], elapsed
    );
    if worst.iter().all(|&w| w <= 0.15) && elapsed < Duration::from_secs(5) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn inference() -> Outcome {
    let params = CrfParams { iterations: 5, ..CrfParams::default() };
    let mut worst = 1.0f64;
    let scenes = 12;
    for i in 0..scenes {
        let spec = small_scene(100 + i, 16, 4);
        let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
        let probs =
            corrupt_to_probs(&scene.gt, &SceneSpec { noise_flip_rate: 0.3, ..spec }).map_err(|e| e.to_string())?;
        let run = |backend| crf_refine(&probs, &scene.image, &params, backend).map(|q| argmax_labels(&q));
        let (a, b) = (
            run(FilterBackend::Lattice).map_err(|e| e.to_string())?,
            run(FilterBackend::Exact).map_err(|e| e.to_string())?,
        );
        let agree = a.data().iter().zip(b.data()).filter(|(x, y)| x == y).count();
        worst = worst.min(agree as f64 / a.len() as f64);
    }
    let detail =
        format!("{scenes} scenes 16x16, 5 iterations, worst argmax agreement {:.2}% (limit 99%)", worst * 100.0);
    if worst >= 0.99 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hand_oracle() -> Outcome {
    let p = ProbMap::new(1, 2, 2, vec![0.6, 0.4, 0.4, 0.6]).map_err(|e| e.to_string())?;
    let u = unary_from_probs(&p, 1e-8).map_err(|e| e.to_string())?;
    // Identical features, so the kernel between the two pixels is exactly 1.
    let features = FeatureSet::new(5, vec![0.3; 10]).map_err(|e| e.to_string())?;
    let crf = DenseCrf::with_kernels(&u, vec![(features, 1.0)], FilterBackend::Exact).map_err(|e| e.to_string())?;
    let q = crf.step(&p).map_err(|e| e.to_string())?;

    // Each pixel hears only the other: message = other's Q / (1 + 1), and the
    // Potts penalty for label l is the message mass on the other label.
    let other = [[0.4, 0.6], [0.6, 0.4]];
    let own = [[0.6f64, 0.4], [0.4, 0.6]];
    let mut max_err = 0.0f64;
    for px in 0..2 {
        let e: Vec<f64> = (0..2).map(|l| own[px][l].ln() - other[px][1 - l] / 2.0).collect();
        let z: f64 = e.iter().map(|v| v.exp()).sum();
        for (e, got) in e.iter().zip(q.pixel(px)) {
            max_err = max_err.max((e.exp() / z - f64::from(*got)).abs());
        }
    }
    let detail = format!("max deviation {max_err:.2e} (limit 1e-6)");
    if max_err <= 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn check_rows(p: &ProbMap, what: &str) -> Result<(), TestCaseError> {
    for (i, row) in p.pixels().enumerate() {
        let sum: f64 = row.iter().map(|&v| f64::from(v)).sum();
        prop_assert!(row.iter().all(|&v| v >= 0.0), "{} pixel {} negative: {:?}", what, i, row);
        prop_assert!((sum - 1.0).abs() <= 1e-5, "{} pixel {} sums to {}", what, i, sum);
    }
    Ok(())
}

fn normalization() -> Outcome {
    let strategy = (any::<u64>(), 4usize..12, 4usize..12, 1usize..10, 0.0f64..=1.0, 0.0f64..0.5, 1usize..5);
    run_cases(1000, strategy, |(seed, h, w, c, flip, speckle, k)| {
        let spec = SceneSpec {
            height: h,
            width: w,
            num_classes: c,
            num_seeds: 4,
            noise_flip_rate: flip,
            speckle_rate: speckle,
            rng_seed: seed,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let members: Vec<ProbMap> = (0..k)
            .map(|m| corrupt_to_probs(&scene.gt, &SceneSpec { rng_seed: derive_seed(seed, m as u64), ..spec }).unwrap())
            .collect();
        for m in &members {
            check_rows(m, "corrupt_to_probs")?;
        }
        let avg = average_probs(&members, None).unwrap();
        check_rows(&avg, "average_probs")?;
        let params = CrfParams { theta_alpha: 5.0, ..CrfParams::default() };
        let u = unary_from_probs(&avg, params.clamp_floor).unwrap();
        let backend = if seed % 2 == 0 { FilterBackend::Lattice } else { FilterBackend::Exact };
        let mut q = avg.clone();
        for _ in 0..2 {
            q = meanfield_step(&q, &u, &scene.image, &params, backend).unwrap();
            check_rows(&q, "meanfield_step")?;
        }
        Ok(())
    })
}

fn brute_vote(votes: &[u8], c: usize, tie: TieBreak) -> u8 {
    let count = |l: u8| votes.iter().filter(|&&v| v == l).count();
    let best = (0..c as u8).map(count).max().unwrap_or(0);
    if best == 0 {
        return IGNORE_LABEL;
    }
    match tie {
        TieBreak::LowestClass => (0..c as u8).find(|&l| count(l) == best).unwrap(),
        TieBreak::Priority => *votes.iter().find(|&&v| v != IGNORE_LABEL && count(v) == best).unwrap(),
    }
}

fn voting() -> Outcome {
    let strategy = (1usize..=7, 1usize..=5, 1usize..=5, 1usize..=10).prop_flat_map(|(k, h, w, c)| {
        let cell = prop_oneof![6 => 0..c as u8, 1 => Just(IGNORE_LABEL)];
        (
            proptest::collection::vec(proptest::collection::vec(cell, h * w), k)
                .prop_map(move |ms| ms.into_iter().map(|d| LabelMap::new(h, w, c, d).unwrap()).collect::<Vec<_>>()),
            0..k,
        )
    });
    run_cases(500, strategy, |(members, rot)| {
        let c = members[0].num_classes();
        let names = |k: usize| (0..k).map(|i| format!("m{i}")).collect::<Vec<_>>();
        for tie in [TieBreak::Priority, TieBreak::LowestClass] {
            let cfg = EnsembleConfig::new(names(members.len()), tie).unwrap();
            let out = vote(&members, &cfg).unwrap();
            for i in 0..out.len() {
                let votes: Vec<u8> = members.iter().map(|m| m.data()[i]).collect();
                prop_assert_eq!(out.data()[i], brute_vote(&votes, c, tie), "pixel {} votes {:?}", i, votes);
            }
            let single = EnsembleConfig::new(names(1), tie).unwrap();
            prop_assert_eq!(&vote(&members[..1], &single).unwrap(), &members[0]);

            let mut rotated = members.clone();
            rotated.rotate_left(rot);
            let out2 = vote(&rotated, &cfg).unwrap();
            for i in 0..out.len() {
                let votes: Vec<u8> = members.iter().map(|m| m.data()[i]).collect();
                let best = (0..c as u8).map(|l| votes.iter().filter(|&&v| v == l).count()).max().unwrap();
                let tied = (0..c as u8).filter(|&l| votes.iter().filter(|&&v| v == l).count() == best).count();
                if best == 0 || tied == 1 {
                    prop_assert_eq!(out.data()[i], out2.data()[i]);
                }
            }
        }
        Ok(())
    })
}

fn morphology() -> Outcome {
    let mut converged = 0;
    for i in 0..100u64 {
        let labels = if i % 2 == 0 {
            let spec = SceneSpec {
                height: 24 + (i as usize % 17),
                width: 20 + (i as usize % 13),
                num_classes: 6,
                num_seeds: 6,
                noise_flip_rate: 0.0,
                speckle_rate: 0.15,
                rng_seed: derive_seed(SEED, 1000 + i),
                ..SceneSpec::default()
            };
            let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
            argmax_labels(&corrupt_to_probs(&scene.gt, &spec).map_err(|e| e.to_string())?)
        } else {
            let (h, w, c) = (10 + (i as usize % 9), 12 + (i as usize % 7), 2 + (i as usize % 4));
            let mut x = derive_seed(SEED, 2000 + i);
            let data = (0..h * w)
                .map(|_| {
                    x = derive_seed(x, 1);
                    if x.is_multiple_of(23) {
                        IGNORE_LABEL
                    } else {
                        (x % c as u64) as u8
                    }
                })
                .collect();
            LabelMap::new(h, w, c, data).map_err(|e| e.to_string())?
        };
        let (min_area, conn) =
            (2 + (i as usize % 9), if i % 3 == 0 { Connectivity::Eight } else { Connectivity::Four });
        let once = remove_small_components(&labels, min_area, conn, 8);
        if !once.converged {
            continue;
        }
        converged += 1;
        let cc = connected_components(&once.labels, conn);
        for id in 0..cc.num_components() {
            let label = cc.component_labels()[id];
            if label == IGNORE_LABEL || cc.component_sizes()[id] >= min_area {
                continue;
            }
            if has_voting_neighbour(&once.labels, cc.component_ids(), id as u32, conn) {
                return Err(format!(
                    "map {i}: interior component {id} of size {} below {min_area}",
                    cc.component_sizes()[id]
                ));
            }
        }
        if remove_small_components(&once.labels, min_area, conn, 8).labels != once.labels {
            return Err(format!("map {i}: second application changed the map"));
        }
    }
    Ok(format!("100 maps, {converged} reached a fixed point; no small interior components, reapplication is a no-op"))
}

/// Whether component `id` touches a non-ignore pixel of another class.
fn has_voting_neighbour(labels: &LabelMap, ids: &[u32], id: u32, conn: Connectivity) -> bool {
    let (h, w) = (labels.height() as isize, labels.width() as isize);
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    (0..ids.len()).filter(|&p| ids[p] == id).any(|p| {
        let (r, c) = ((p as isize) / w, (p as isize) % w);
        offsets.iter().any(|&(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            if rr < 0 || cc < 0 || rr >= h || cc >= w {
                return false;
            }
            let q = (rr * w + cc) as usize;
            ids[q] != id && labels.data()[q] != IGNORE_LABEL
        })
    })
}

fn metrics_checks() -> Outcome {
    let gt = LabelMap::new(1, 4, 2, vec![0, 0, 1, 1]).map_err(|e| e.to_string())?;
    let pred = LabelMap::new(1, 4, 2, vec![0, 1, 1, 1]).map_err(|e| e.to_string())?;
    let cm = accumulate(&pred, &gt, ConfusionMatrix::new(2)).map_err(|e| e.to_string())?;
    if iou_ratios(&cm) != [Some((1, 2)), Some((2, 3))] {
        return Err(format!("ratios {:?}", iou_ratios(&cm)));
    }
    // 1/2 + 2/3 = 7/6 over two classes.
    let m = miou(&cm).map_err(|e| e.to_string())?;
    if (m - 7.0 / 12.0).abs() > f64::EPSILON {
        return Err(format!("miou {m}"));
    }

    let mut x = SEED;
    let mut next = |n: u64| {
        x = derive_seed(x, 7);
        (x % n) as u8
    };
    let images: Vec<(LabelMap, LabelMap)> = (0..15)
        .map(|i| {
            let (h, w) = (3 + i % 4, 2 + i % 5);
            let mut map = || {
                let d = (0..h * w).map(|_| if next(9) == 0 { IGNORE_LABEL } else { next(5) }).collect();
                LabelMap::new(h, w, 5, d).unwrap()
            };
            (map(), map())
        })
        .collect();
    let fold = |order: &[usize]| {
        order.iter().fold(ConfusionMatrix::new(5), |cm, &i| accumulate(&images[i].0, &images[i].1, cm).unwrap())
    };
    let forward: Vec<usize> = (0..images.len()).collect();
    let reference = fold(&forward);
    for k in 1..images.len() {
        let order: Vec<usize> = forward.iter().map(|i| (i * k + 3) % images.len()).collect();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() == images.len() && fold(&order) != reference {
            return Err(format!("order {order:?} changed the confusion matrix"));
        }
    }
    let reversed: Vec<usize> = forward.iter().rev().copied().collect();
    if fold(&reversed) != reference || iou_per_class(&fold(&reversed)) != iou_per_class(&reference) {
        return Err("reversed order changed the result".into());
    }

    let names = ["building", "structure", "road", "sky", "stone", "t.-grass", "t.-other", "t.-snow", "tree"];
    let vals = [56.66, 36.73, 29.30, 81.65, 20.60, 52.83, 52.54, 54.07, 67.83];
    let mut report = EvalReport::new(names.iter().map(|s| s.to_string()).collect());
    report
        .push_row(StageRow {
            stage: "+E+D+M".into(),
            miou: 0.4510,
            per_class: vals.iter().map(|v| Some(v / 100.0)).collect(),
        })
        .map_err(|e| e.to_string())?;
    let md = render_report(&report, ReportFormat::Markdown);
    let row = "| +E+D+M | 45.10 | 56.66 | 36.73 | 29.30 | 81.65 | 20.60 | 52.83 | 52.54 | 54.07 | 67.83 |";
    if !md.lines().any(|l| l == row) {
        return Err(format!("rendered table lacks the row:\n{md}"));
    }
    Ok("IoU (1/2, 2/3), miou 7/12, order-invariant over 15 images, +E+D+M row verbatim".into())
}

fn ladder() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = BundleSpec { scenes: 20, members: 3, base_seed: SEED, scene: SceneSpec::default() };
    bundle::write_bundle(dir.path(), &spec).map_err(|e| e.to_string())?;
    let config = PipelineConfig::load(dir.path().join("pipeline.toml")).map_err(|e| e.to_string())?;
    let summary = run_pipeline(&config, RunOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let report = summary.report.ok_or("no report produced")?;
    let score = |stage: &str| report.row(stage).map(|r| r.miou).ok_or(format!("missing row {stage}"));
    let best_member =
        (0..3).map(|m| score(&format!("baseline:{}", bundle::member_name(m)))).collect::<Result<Vec<_>, _>>()?;
    let best_member = best_member.into_iter().fold(0.0, f64::max);
    let (e, ed, edm) = (score("+E")?, score("+E+D")?, score("+E+D+M")?);
    let detail = format!(
        "best member {:.2}, +E {:.2}, +E+D {:.2}, +E+D+M {:.2}; {:.1?} (limit 2 min)",
        best_member * 100.0,
        e * 100.0,
        ed * 100.0,
        edm * 100.0,
        elapsed
    );
    if summary.failures.is_empty() && e >= best_member && ed > e && edm >= ed && elapsed < Duration::from_secs(120) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn performance() -> Outcome {
    let spec = SceneSpec { height: 512, width: 512, rng_seed: SEED, ..SceneSpec::default() };
    let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
    let probs = corrupt_to_probs(&scene.gt, &spec).map_err(|e| e.to_string())?;
    let params = CrfParams::default();
    let start = Instant::now();
    let q = crf_refine(&probs, &scene.image, &params, FilterBackend::Lattice).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let correct = argmax_labels(&q).data().iter().zip(scene.gt.data()).filter(|(a, b)| a == b).count();
    let detail = format!(
        "512x512, 9 classes, {} iterations: {:.2?} (limit 10s), {:.1}% pixels correct",
        params.iterations,
        elapsed,
        100.0 * correct as f64 / q.num_pixels() as f64
    );
    if elapsed < Duration::from_secs(10) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn io_checks() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("x");
    let strategy = (1usize..20, 1usize..20, 1usize..10, any::<u64>());
    run_cases(50, strategy, |(h, w, c, seed)| {
        let spec =
            SceneSpec { height: h.max(4), width: w.max(4), num_classes: c, rng_seed: seed, ..SceneSpec::default() };
        let scene = generate_scene(&spec).unwrap();
        let probs = corrupt_to_probs(&scene.gt, &spec).unwrap();
        let spm = path.with_extension("spm");
        io::write_probmap(&probs, &spm).unwrap();
        let back = io::read_probmap(&spm).unwrap();
        let bits = |p: &ProbMap| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&probs));
        prop_assert_eq!(std::fs::read(&spm).unwrap(), io::encode_probmap(&back));
        let png = path.with_extension("png");
        io::write_labelmap_png(&scene.gt, &png).unwrap();
        prop_assert_eq!(io::read_labelmap_png(&png, c).unwrap(), scene.gt);
        Ok(())
    })?;
    let cases = common::write_corpus(dir.path());
    for case in &cases {
        let got = case.read_code();
        if got != Some(case.code) {
            return Err(format!("{}: expected {}, got {got:?}", case.name, case.code));
        }
    }
    Ok(format!("50 SPM1 and label PNG round-trips bit-exact, {} corrupt files rejected with their codes", cases.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("filtering oracle", filtering),
        ("inference oracle", inference),
        ("hand-oracle mean field", hand_oracle),
        ("normalization suite", normalization),
        ("voting oracle", voting),
        ("morphology fixed point", morphology),
        ("metrics", metrics_checks),
        ("ladder direction", ladder),
        ("performance floor", performance),
        ("io round-trips and corpus", io_checks),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
