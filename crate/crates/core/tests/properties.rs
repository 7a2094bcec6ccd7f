use her2kit_core::charcurve::{aggregate_rois, characteristics_curve, fit_cubic, full_roi, CentroidModel, CharCurve, HueWindow, RoiResult, CURVE_SAMPLES};
use her2kit_core::eval::{common_cases, pooled_agreement_table};
use her2kit_core::imgproc::stain::OdImage;
use her2kit_core::imgproc::{adaptive_threshold, bilinear_pool, deconvolve, fill_holes, skeletonize, BinaryMask, FeatureMap, StainModel};
use her2kit_core::ingest::{parse_ground_truth, parse_submission, render_ground_truth, render_submission};
use her2kit_core::patchpipe::samme::{train_samme, SammeParams};
use her2kit_core::patchpipe::{aggregate_indus, aggregate_mucs, aggregate_visilab, is_background_mucs, pcms_eq2, tally, BackgroundParams, PatchTally};
use her2kit_core::pcms::{membrane_extent, pcms_class_prior, pcms_morphological, MembraneExtent, TumorMask};
use her2kit_core::*;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;

fn score() -> impl Strategy<Value = Her2Score> {
    (0usize..4).prop_map(|i| Her2Score::from_index(i).unwrap())
}

fn fish() -> impl Strategy<Value = FishStatus> {
    prop_oneof![
        Just(FishStatus::Negative),
        Just(FishStatus::Positive),
        Just(FishStatus::Borderline),
        Just(FishStatus::NotPerformed)
    ]
}

fn gt_rows(max: usize) -> impl Strategy<Value = Vec<GroundTruthRecord>> {
    prop::collection::vec((score(), fish(), prop::option::of(0u32..=1000)), 1..max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (s, f, p))| GroundTruthRecord::new(format!("{}", i + 1), s, f, p.map(|v| v as f64 / 10.0)).unwrap())
            .collect()
    })
}

fn mask(max_side: usize) -> impl Strategy<Value = BinaryMask> {
    (3..max_side, 3..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<bool>(), w * h).prop_map(move |bits| BinaryMask::from_fn(w, h, |x, y| bits[y * w + x]))
    })
}

fn gray(max_side: u32) -> impl Strategy<Value = GrayImage> {
    (3..max_side, 3..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), (w * h) as usize)
            .prop_map(move |px| GrayImage::from_fn(w, h, |x, y| Luma([px[(y * w + x) as usize]])))
    })
}

fn rgb(max_side: u32) -> impl Strategy<Value = RgbImage> {
    (2..max_side, 2..max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<[u8; 3]>(), (w * h) as usize)
            .prop_map(move |px| RgbImage::from_fn(w, h, |x, y| Rgb(px[(y * w + x) as usize])))
    })
}

fn tally_strategy() -> impl Strategy<Value = PatchTally> {
    (0usize..300, 0usize..300, 0usize..300, 0usize..300, 0usize..50)
        .prop_filter("non-empty", |t| t.0 + t.1 + t.2 + t.3 > 0)
        .prop_map(|(a, b, c, d, bg)| PatchTally { n: [a, b, c, d], background: bg })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn agreement_image_is_fixed_set(g in score(), p in score()) {
        let v = eval::agreement_points(g, p).as_f64();
        prop_assert!([0.0, 2.5, 5.0, 10.0, 15.0].contains(&v));
    }

    #[test]
    fn weighted_confidence_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, literal in any::<bool>()) {
        prop_assume!(a < b);
        let mode = if literal { Eq1Mode::Literal } else { Eq1Mode::Corrected };
        let wc = |correct, c| weighted_confidence(correct, c, mode).unwrap();
        prop_assert!(wc(true, a) < wc(true, b));
        prop_assert!(wc(false, a) > wc(false, b));
        if !literal {
            for c in [a, b] {
                prop_assert!((0.0..=1.0).contains(&wc(true, c)) && (0.0..=1.0).contains(&wc(false, c)));
            }
        }
    }

    #[test]
    fn totals_equal_per_case_sums(rows in gt_rows(40), seed in any::<u64>(), bonus in any::<bool>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let keep: Vec<bool> = rows.iter().map(|_| rng.random_bool(0.8)).collect();
        let preds: Vec<Prediction> = rows.iter().zip(keep).filter(|p| p.1).map(|(r, _)| {
            let s = Her2Score::from_index(rng.random_range(0..4)).unwrap();
            let pcms = rng.random_bool(0.7).then(|| rng.random_range(0..=100) as f64);
            Prediction::new(r.case_id.clone(), s, rng.random_range(0..=100) as f64 / 100.0, pcms).unwrap()
        }).collect();
        let opts = EvalOptions { combined_includes_bonus: bonus, ..EvalOptions::default() };
        let res = evaluate_submission("t", &rows, &preds, opts).unwrap();
        let pts: i64 = res.per_case.values().map(|e| e.agreement.halves()).sum();
        let bon: i64 = res.per_case.values().map(|e| e.bonus.unwrap_or(Points::ZERO).halves()).sum();
        prop_assert_eq!(res.totals.points.halves(), pts);
        prop_assert_eq!(res.totals.points_plus_bonus.halves(), pts + bon);
        let wc: f64 = res.per_case.values().map(|e| e.weighted_confidence).sum();
        let comb: f64 = res.per_case.values().map(|e| e.combined).sum();
        prop_assert!((res.totals.weighted_confidence - wc).abs() < 1e-9);
        prop_assert!((res.totals.combined - comb).abs() < 1e-9);
        prop_assert!(res.totals.points.halves() <= 30 * rows.len() as i64);
        prop_assert_eq!(res.evaluated_case_count + res.skipped.len(), rows.len());
    }

    #[test]
    fn ranking_is_a_permutation(points in prop::collection::vec(0i64..60, 1..12), crit in 0usize..4) {
        let results: Vec<SubmissionResult> = points.iter().enumerate().map(|(i, &p)| {
            let gt: Vec<GroundTruthRecord> = (0..4).map(|k| GroundTruthRecord::new(format!("{k}"), Her2Score::Three, FishStatus::NotPerformed, Some(50.0)).unwrap()).collect();
            let preds: Vec<Prediction> = (0..(p as usize % 5)).map(|k| Prediction::new(format!("{k}"), Her2Score::Three, 0.5, Some(50.0)).unwrap()).collect();
            evaluate_submission(&format!("team{i}"), &gt, &preds, EvalOptions::default()).unwrap()
        }).collect();
        let board = rank(&results, Criterion::ALL[crit]).unwrap();
        let mut teams: Vec<&str> = board.iter().map(|e| e.team.as_str()).collect();
        teams.sort();
        let mut expected: Vec<String> = (0..points.len()).map(|i| format!("team{i}")).collect();
        expected.sort();
        prop_assert_eq!(teams, expected.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        let mut ranks: Vec<usize> = board.iter().map(|e| e.rank).collect();
        ranks.sort();
        prop_assert_eq!(ranks, (1..=points.len()).collect::<Vec<_>>());
    }

    #[test]
    fn ground_truth_round_trip(rows in gt_rows(30)) {
        let file = GroundTruthFile { rows, warnings: Vec::new() };
        let back = parse_ground_truth(render_ground_truth(&file).as_bytes()).unwrap();
        prop_assert_eq!(back.rows, file.rows);
    }

    #[test]
    fn submission_round_trip(rows in prop::collection::vec((score(), 0u32..=100, prop::option::of(0u32..=1000), any::<bool>()), 1..30)) {
        let file = SubmissionFile {
            team: "team".into(),
            rows: rows.iter().enumerate().map(|(i, &(s, c, p, _))| Prediction::new(format!("c{i}"), s, c as f64 / 100.0, p.map(|v| v as f64 / 10.0)).unwrap()).collect(),
            flags: rows.iter().map(|r| if r.3 { "coverage".to_string() } else { String::new() }).collect(),
        };
        let back = parse_submission(render_submission(&file).as_bytes(), "team").unwrap();
        prop_assert_eq!(back, file);
    }

    #[test]
    fn deconvolution_round_trip(cs in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..64)) {
        let m = StainModel::default();
        let od: Vec<[f64; 3]> = cs.iter().map(|&(h, d)| std::array::from_fn(|k| h * m.hematoxylin[k] + d * m.dab[k])).collect();
        let conc = deconvolve(&OdImage::new(cs.len(), 1, od), &m).unwrap();
        for (i, &(h, d)) in cs.iter().enumerate() {
            prop_assert!((conc.hematoxylin.get(i, 0) - h).abs() <= 1e-6);
            prop_assert!((conc.dab.get(i, 0) - d).abs() <= 1e-6);
        }
    }

    #[test]
    fn adaptive_threshold_offset_monotone(img in gray(40), a in -50.0f64..50.0, b in -50.0f64..50.0, half in 1usize..6) {
        prop_assume!(a < b);
        let w = 2 * half + 1;
        let lo = adaptive_threshold(&img, w, a).unwrap();
        let hi = adaptive_threshold(&img, w, b).unwrap();
        prop_assert!(lo.is_subset_of(&hi));
    }

    #[test]
    fn skeleton_and_fill_idempotent(m in mask(24)) {
        let s = skeletonize(&m);
        prop_assert!(s.is_subset_of(&m));
        prop_assert_eq!(skeletonize(&s), s.clone());
        let f = fill_holes(&m);
        prop_assert!(m.is_subset_of(&f));
        prop_assert_eq!(fill_holes(&f), f);
    }

    #[test]
    fn bilinear_unit_norm(data in prop::collection::vec(-5.0f64..5.0, 2 * 3 * 4)) {
        let map = FeatureMap::new(2, 3, 4, data.clone()).unwrap();
        let b = bilinear_pool(&map);
        if data.iter().any(|&v| v != 0.0) && !b.degenerate {
            let norm = b.values.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn curve_monotone_non_increasing(img in rgb(24)) {
        let c = characteristics_curve(&img, &full_roi(&img), HueWindow::default());
        let v = c.values();
        for k in 1..CURVE_SAMPLES {
            prop_assert!(v[k] <= v[k - 1]);
        }
    }

    #[test]
    fn high_curves_are_three_plus(base in 0.30f64..1.0, drops in prop::collection::vec(0.0f64..0.01, CURVE_SAMPLES)) {
        let mut vals = [0.0; CURVE_SAMPLES];
        let mut v = (base + drops.iter().sum::<f64>()).min(1.0);
        for k in 0..CURVE_SAMPLES {
            vals[k] = v.max(base);
            v -= drops[k];
        }
        let curve = CharCurve::from_values(vals);
        let (s, _) = charcurve::classify_curve(&curve, &fit_cubic(&curve), &CentroidModel::default());
        prop_assert_eq!(s, Her2Score::Three);
    }

    #[test]
    fn roi_order_does_not_matter(items in prop::collection::vec((score(), 0.0f64..1.0, 0.0f64..1.0), 1..8), rot in 0usize..8) {
        let rois: Vec<RoiResult> = items.iter().enumerate().map(|(i, &(s, c, f))| {
            let curve = CharCurve::from_values([f; CURVE_SAMPLES]);
            RoiResult { tile: i, roi: full_roi(&RgbImage::new(4, 4)), fit: fit_cubic(&curve), curve, score: s, confidence: c }
        }).collect();
        let mut rotated = rois.clone();
        rotated.rotate_left(rot % rois.len());
        rotated.reverse();
        let a = aggregate_rois(rois).unwrap();
        let b = aggregate_rois(rotated).unwrap();
        prop_assert_eq!((a.score, a.confidence, a.pcms), (b.score, b.confidence, b.pcms));
    }

    #[test]
    fn aggregation_is_order_free(labels in prop::collection::vec(prop::option::of(score()), 1..200), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (tally(&labels), tally(&shuffled));
        prop_assert_eq!(a, b);
        if a.total() > 0 {
            prop_assert_eq!(aggregate_indus(&a).unwrap(), aggregate_indus(&b).unwrap());
            prop_assert_eq!(aggregate_mucs(&a).unwrap(), aggregate_mucs(&b).unwrap());
            prop_assert_eq!(aggregate_visilab(&a).unwrap(), aggregate_visilab(&b).unwrap());
        }
    }

    #[test]
    fn pcms_eq2_range(t in tally_strategy()) {
        let p = pcms_eq2(&t).unwrap();
        prop_assert!((0.0..=100.0).contains(&p));
        prop_assert_eq!(p == 100.0, t.n[0] == 0 && t.n[1] == 0);
    }

    #[test]
    fn visilab_is_sound(t in tally_strategy()) {
        let s = aggregate_visilab(&t).unwrap();
        if s != Her2Score::Zero {
            prop_assert!(t.n[s.index()] as f64 / t.total() as f64 >= 0.10);
        }
    }

    #[test]
    fn background_filter_is_pure(img in rgb(40)) {
        let params = BackgroundParams::default();
        prop_assert_eq!(is_background_mucs(&img, &params).unwrap(), is_background_mucs(&img.clone(), &params).unwrap());
    }

    #[test]
    fn morphological_pcms_range_and_monotone(area in 0usize..10_000, e1 in 0.0f64..20_000.0, e2 in 0.0f64..20_000.0) {
        let tumor = TumorMask { mask: BinaryMask::new(1, 1), regions: Vec::new(), area, empty: area == 0 };
        let mem = |extent| MembraneExtent { extent, similarity: 1.0, binary: BinaryMask::new(1, 1), skeleton: BinaryMask::new(1, 1), filled: BinaryMask::new(1, 1) };
        let (p1, p2) = (pcms_morphological(&tumor, &mem(e1)).pcms, pcms_morphological(&tumor, &mem(e2)).pcms);
        prop_assert!((0.0..=100.0).contains(&p1));
        if e1 <= e2 {
            prop_assert!(p1 <= p2);
        }
    }

    #[test]
    fn membrane_similarity_range(m in mask(24)) {
        let dab = her2kit_core::imgproc::Field::from_fn(m.width(), m.height(), |x, y| if m.get(x, y) { 1.0 } else { 0.0 });
        let e = membrane_extent(&dab, 0.5);
        prop_assert!((0.0..=1.0).contains(&e.similarity));
        prop_assert!(e.skeleton.is_subset_of(&e.filled));
        prop_assert!(e.extent <= (m.width() * m.height()) as f64);
    }

    #[test]
    fn class_prior_order_free(rows in gt_rows(30), seed in any::<u64>(), s in score()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = pcms_class_prior(&GroundTruthFile { rows, warnings: Vec::new() }, s);
        let b = pcms_class_prior(&GroundTruthFile { rows: shuffled, warnings: Vec::new() }, s);
        match (a, b) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-9),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "one ordering failed"),
        }
    }
}

fn samme_error_curve(n: usize, seed: u64, k: usize, depth: usize) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut y: Vec<usize> = x
        .iter()
        .map(|r| (r[0] + 0.5 * r[1] > 0.0) as usize + if k > 2 && r[2] > 0.3 { 2 } else { 0 })
        .map(|c| c.min(k - 1))
        .collect();
    y[0] = 0;
    y[1] = 1;
    let model = train_samme(&x, &y, &SammeParams { rounds: 30, max_depth: depth }).unwrap();
    (1..=model.rounds.len()).map(|t| model.truncated(t).error_rate(&x, &y).unwrap()).collect()
}

/// Boosting minimizes an exponential bound, not the 0/1 error, so the training error
/// of the first T rounds can rise with T. This pins a concrete counterexample.
#[test]
fn samme_training_error_counterexample() {
    let errs = samme_error_curve(20, 12937426209732996, 3, 1);
    assert!(errs.windows(2).any(|w| w[1] > w[0]), "{errs:?}");
}

#[test]
fn bonus_is_zero_off_diagonal_exhaustive() {
    for g in Her2Score::ALL {
        for p in Her2Score::ALL {
            if g == p {
                continue;
            }
            for gp in 0..=100 {
                let gt = GroundTruthRecord::new("1", g, FishStatus::NotPerformed, Some(gp as f64)).unwrap();
                for pp in 0..=100 {
                    let pred = Prediction::new("1", p, 0.5, Some(pp as f64)).unwrap();
                    assert_eq!(bonus_points(&gt, &pred), Some(Points::ZERO));
                }
            }
        }
    }
}

#[test]
fn max_points_is_fifteen_per_case() {
    let gt = ingest::fixtures::load_bundled().unwrap().mvm_gt;
    let perfect: Vec<Prediction> = gt.rows.iter().map(|r| Prediction::new(r.case_id.clone(), r.score, 1.0, r.pcms).unwrap()).collect();
    let res = evaluate_submission("oracle", &gt.rows, &perfect, EvalOptions::default()).unwrap();
    assert_eq!(res.totals.points.as_f64(), 15.0 * gt.rows.len() as f64);
    assert_eq!(res.totals.points.as_f64(), 420.0);
    assert_eq!(res.totals.weighted_confidence, 28.0);
    let common = common_cases([perfect.as_slice()]);
    assert_eq!(common.len(), 28);
    let table = pooled_agreement_table(&gt.rows, &[("oracle".to_string(), perfect)]);
    assert!(!table.to_csv().is_empty());
}
