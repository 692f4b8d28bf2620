//! Acceptance suite. Each test checks one criterion at its pinned tolerance and
//! prints a single `PASS`/`FAIL` line; run with `--nocapture` to see them.

mod common;

use std::time::Instant;

use multishot::attention::{default_scale, dense_attention};
use multishot::bench::{
    bench_scaling, time_point, verify_equivalence, BenchConfig, Check, Fault, Precision, VerifyCase, VerifyConfig,
};
use multishot::curation::{assemble_samples, detect_cuts, HierarchicalPrompt, SourceShot};
use multishot::metrics::match_cuts;
use multishot::{
    masked_dense_attention, shot_cut_accuracy, sparse_flops, sparse_self_attention, window_cross_attention,
    BoolMask, CutList, Matrix, PenaltyPolicy, PlanMode, ShotSpec, SparsePlan, SummaryStrategy, TokenLayout,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: &str, name: &str, passed: bool, detail: String) {
    println!("{} {id}: {name} ({detail})", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "{id} failed: {detail}");
}

const INSTANCES: usize = 200;

#[test]
fn ac1_sparse_matches_masked_dense_oracle() {
    let start = Instant::now();
    let config = VerifyConfig {
        seed: 1,
        cases: INSTANCES,
        precision: Precision::Double,
        ..Default::default()
    };
    let report_ = verify_equivalence(&config).unwrap();

    // cross-check every instance against the test-side brute-force oracle as well
    let mut worst: f64 = 0.0;
    let mut strategies = [0usize; 2];
    for i in 0..INSTANCES {
        let case = VerifyCase::generate(&config, i).unwrap();
        let both = case.strategy == SummaryStrategy::FirstAndLastFrame;
        strategies[both as usize] += 1;
        let plan = SparsePlan::new(&case.layout, case.strategy.clone(), PlanMode::Dedupe).unwrap();
        let out = sparse_self_attention(&case.q, &case.k, &case.v, &plan).unwrap();
        let shot = common::shot_ids(&case.layout);
        let summary = common::summary_flags(&case.layout, both);
        let oracle = common::brute_attention(
            &common::rows(&case.q),
            &common::rows(&case.k),
            &common::rows(&case.v),
            |t| common::sparse_keys(&shot, &summary, t),
            1.0 / (case.q.cols() as f64).sqrt(),
        );
        worst = worst.max(common::max_diff(&out, &oracle));
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = report_.passed
        && report_.max_diff_sparse <= 1e-10
        && worst <= 1e-10
        && strategies.iter().all(|&c| c > 0)
        && secs < 60.0;
    report(
        "AC-1",
        "sparse self-attention equals masked-dense oracle",
        ok,
        format!(
            "{INSTANCES} instances, harness max diff {:.2e}, brute-force max diff {worst:.2e}, {secs:.2}s",
            report_.max_diff_sparse
        ),
    );
}

#[test]
fn ac1_injected_fault_is_detected_and_located() {
    let config = VerifyConfig {
        seed: 11,
        cases: INSTANCES,
        precision: Precision::Double,
        fault: Some(Fault::DropSummaryKey),
        ..Default::default()
    };
    let verify = verify_equivalence(&config).unwrap();
    let injected: Vec<(usize, (usize, usize))> = verify
        .injected
        .iter()
        .enumerate()
        .filter_map(|(case, pair)| pair.map(|p| (case, p)))
        .collect();
    let located = injected
        .iter()
        .filter(|(case, (qs, ks))| {
            verify.failures.iter().any(|f| {
                f.case == *case && f.check == Check::Sparse && f.query_shot == Some(*qs) && f.key_shot == Some(*ks)
            })
        })
        .count();
    let window_failures = verify.failures.iter().filter(|f| f.check == Check::Window).count();
    let ok = !verify.passed && !injected.is_empty() && located == injected.len() && window_failures == 0;
    report(
        "AC-1b",
        "verification flags and locates an injected plan fault",
        ok,
        format!("{} faulty cases, {located} located at the injected (query shot, key shot)", injected.len()),
    );
}

#[test]
fn ac2_window_cross_attention_equivalence_and_locality() {
    let config = VerifyConfig {
        seed: 2,
        cases: INSTANCES,
        precision: Precision::Double,
        ..Default::default()
    };
    let verify = verify_equivalence(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut locality_violations = 0;
    for i in 0..INSTANCES {
        let case = VerifyCase::generate(&config, i).unwrap();
        let base =
            window_cross_attention(&case.q_video, &case.k_text, &case.v_text, &case.layout, &case.prompt)
                .unwrap();
        let n = case.layout.num_shots();
        let keep = rng.random_range(0..n);
        let mut k2 = case.k_text.clone();
        let mut v2 = case.v_text.clone();
        let foreign = case
            .prompt
            .shots()
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != keep)
            .map(|(_, r)| r)
            .chain(case.prompt.delimiters());
        for r in foreign {
            for row in r.clone() {
                for c in 0..k2.cols() {
                    k2.set(row, c, rng.random_range(-1e3..1e3));
                    v2.set(row, c, rng.random_range(-1e3..1e3));
                }
            }
        }
        let out = window_cross_attention(&case.q_video, &k2, &v2, &case.layout, &case.prompt).unwrap();
        if case
            .layout
            .shot_range(keep)
            .unwrap()
            .any(|t| out.row(t) != base.row(t))
        {
            locality_violations += 1;
        }
    }
    let ok = verify.passed && verify.max_diff_window <= 1e-10 && locality_violations == 0;
    report(
        "AC-2",
        "window cross-attention equals masked-dense oracle and is shot-local",
        ok,
        format!(
            "{INSTANCES} instances, max diff {:.2e}, locality violations {locality_violations}",
            verify.max_diff_window
        ),
    );
}

#[test]
fn ac3_flop_exactness_ratio_and_wall_time() {
    // exact integer match of enumerated FLOPs with the closed form
    let mut checked = 0;
    let mut mismatches = 0;
    for n in 1..=16u64 {
        for (frames, tpf) in [(1, 1), (2, 3), (4, 16), (13, 120), (5, 7)] {
            for d in [1u64, 8, 64] {
                for strategy in [SummaryStrategy::FirstFrame, SummaryStrategy::FirstAndLastFrame] {
                    let layout = TokenLayout::uniform(n as usize, ShotSpec::new(frames, tpf).unwrap()).unwrap();
                    let plan = SparsePlan::new(&layout, strategy, PlanMode::Dedupe).unwrap();
                    let l_shot = (frames * tpf) as u64;
                    let s = plan.summaries()[0].len() as u64;
                    let enumerated: u64 = (0..n as usize)
                        .map(|i| 4 * l_shot * plan.kv_list(i).len() as u64 * d)
                        .sum();
                    let closed = 4 * n * l_shot * (l_shot + (n - 1) * s) * d;
                    let r = sparse_flops(&plan, d as usize);
                    checked += 1;
                    if enumerated != closed || r.total != closed || r.closed_form != Some(closed) {
                        mismatches += 1;
                    }
                }
            }
        }
    }

    // N_s = 12, L_shot = 1560 (13 frames x 120 tokens), S = 120, d = 64
    let layout = TokenLayout::uniform(12, ShotSpec::new(13, 120).unwrap()).unwrap();
    let plan = SparsePlan::new(&layout, SummaryStrategy::FirstFrame, PlanMode::Dedupe).unwrap();
    let flops = sparse_flops(&plan, 64);
    let ratio_exact = 2 * flops.dense == 13 * flops.total;
    let ratio = flops.dense_to_sparse_ratio();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (wall_sparse, wall_dense) = time_point::<f32>(&plan, 64, 1, &mut rng).unwrap();
    let wall_ratio = wall_dense / wall_sparse;

    let ok = mismatches == 0 && ratio_exact && ratio == 6.5 && wall_ratio > 2.0;
    report(
        "AC-3",
        "FLOP closed form, 6.5x dense/sparse ratio, wall-time speedup > 2x",
        ok,
        format!(
            "{checked} layouts, {mismatches} mismatches; sparse {} vs dense {} FLOPs, ratio {ratio}; \
             wall {wall_sparse:.0} ms vs {wall_dense:.0} ms, speedup {wall_ratio:.2}x",
            flops.total, flops.dense
        ),
    );
}

#[test]
fn ac4_scaling_law() {
    let config = BenchConfig {
        n_shots: vec![2, 4, 8, 16],
        frames: 16,
        tokens_per_frame: 16,
        d: 32,
        timing: false,
        ..Default::default()
    };
    let rows = bench_scaling(&config).unwrap();
    let (l_shot, s, d) = (256u64, 16u64, 32u64);
    assert!(rows.iter().all(|r| r.l_shot == 256 && r.s == 16));

    // exact affine fit of flops_sparse / N_s against N_s, in integers
    let per_shot: Vec<(u64, u64)> = rows
        .iter()
        .map(|r| (r.n_shots as u64, r.flops_sparse / r.n_shots as u64))
        .collect();
    let divisible = rows.iter().all(|r| r.flops_sparse % r.n_shots as u64 == 0);
    let slope_num = per_shot[1].1 - per_shot[0].1;
    let slope_den = per_shot[1].0 - per_shot[0].0;
    let slope = slope_num / slope_den;
    let intercept = per_shot[0].1 - slope * per_shot[0].0;
    let residual: u64 = per_shot
        .iter()
        .map(|&(n, y)| (intercept + slope * n).abs_diff(y))
        .sum();
    let slope_ok = slope_num.is_multiple_of(slope_den) && slope == 4 * l_shot * s * d;

    // dense / N_s = 4 L_shot d (N_s L_shot): linear in N_s L_shot through the origin
    let dense_linear = rows.iter().all(|r| {
        let n = r.n_shots as u64;
        r.flops_dense % n == 0 && r.flops_dense / n == 4 * l_shot * d * (n * l_shot)
    });
    let sparse_slope_smaller = slope < 4 * l_shot * l_shot * d;

    let ok = divisible && residual == 0 && slope_ok && dense_linear && sparse_slope_smaller;
    report(
        "AC-4",
        "sparse FLOPs per shot affine in N_s, dense per shot linear in N_s*L_shot",
        ok,
        format!(
            "sparse/N_s = {intercept} + {slope}*N_s (residual {residual}); dense slope per shot {}",
            4 * l_shot * l_shot * d
        ),
    );
}

fn random_cut_list(rng: &mut ChaCha8Rng, f_total: usize, max_cuts: usize) -> CutList {
    let k = rng.random_range(0..=max_cuts.min(f_total - 1));
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, f_total - 1, k)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    CutList::new(f_total, cuts).unwrap()
}

#[test]
fn ac5_shot_cut_accuracy_suite() {
    let cl = |cuts: &[usize]| CutList::new(100, cuts.to_vec()).unwrap();
    let empty = shot_cut_accuracy(&cl(&[]), &cl(&[]), PenaltyPolicy::default()).unwrap();
    let near = shot_cut_accuracy(&cl(&[32, 60]), &cl(&[30, 60]), PenaltyPolicy::default()).unwrap();
    let missing = shot_cut_accuracy(&cl(&[30]), &cl(&[30, 60]), PenaltyPolicy::default()).unwrap();
    let examples_ok = empty.sca == 1.0
        && empty.nsd == 0.0
        && (near.sca - 0.980_198_673_306_755_3).abs() <= 1e-9
        && (near.sca - 0.98020).abs() <= 5e-6
        && (missing.sca - 0.716_531_310_573_789_3).abs() <= 1e-9
        && (missing.sca - 0.71653).abs() <= 5e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 1000;
    let mut failures = Vec::new();
    let mut monotone_checked = 0;
    let mut shift_checked = 0;
    for trial in 0..trials {
        let f_total = rng.random_range(20..500);
        let gt = random_cut_list(&mut rng, f_total, 10);
        let pred = random_cut_list(&mut rng, f_total, 10);
        let r = shot_cut_accuracy(&pred, &gt, PenaltyPolicy::default()).unwrap();

        if !(r.sca > 0.0 && r.sca <= 1.0) {
            failures.push(format!("trial {trial}: sca {} out of range", r.sca));
        }
        if (r.sca == 1.0) != (pred == gt) {
            failures.push(format!("trial {trial}: sca == 1 iff identical violated"));
        }
        let perfect = shot_cut_accuracy(&gt, &gt, PenaltyPolicy::default()).unwrap();
        if perfect.sca != 1.0 {
            failures.push(format!("trial {trial}: perfect prediction scored {}", perfect.sca));
        }

        // DP optimality against exhaustive enumeration on small lists
        let small_gt = random_cut_list(&mut rng, f_total, 6);
        let small_pred = random_cut_list(&mut rng, f_total, 6);
        let penalty = r.penalty;
        let m = match_cuts(&small_pred, &small_gt, penalty).unwrap();
        let brute = common::enumerate_matchings(small_pred.cuts(), small_gt.cuts(), penalty);
        if (m.e_matched + m.e_penalty - brute).abs() > 1e-9 {
            failures.push(format!("trial {trial}: DP {} vs exhaustive {brute}", m.e_matched + m.e_penalty));
        }

        // monotonicity: push one matched prediction away from its partner
        if let Some(p) = r.pairs.first().copied() {
            let (pc, gc) = (pred.cuts()[p.pred_idx], gt.cuts()[p.gt_idx]);
            let moved = if pc >= gc { pc + 1 } else { pc - 1 };
            let mut cuts = pred.cuts().to_vec();
            cuts[p.pred_idx] = moved;
            if let Ok(moved_list) = CutList::new(f_total, cuts) {
                let r2 = shot_cut_accuracy(&moved_list, &gt, PenaltyPolicy::default()).unwrap();
                let same_matching = r2
                    .pairs
                    .iter()
                    .map(|x| (x.pred_idx, x.gt_idx))
                    .eq(r.pairs.iter().map(|x| (x.pred_idx, x.gt_idx)));
                if same_matching {
                    monotone_checked += 1;
                    if r2.sca > r.sca {
                        failures.push(format!("trial {trial}: moving a cut away raised sca"));
                    }
                }
            }
        }

        // uniform shift of a perfect prediction by delta frames
        if !gt.cuts().is_empty() {
            let min_gap = std::iter::once(gt.cuts()[0])
                .chain(gt.cuts().windows(2).map(|w| w[1] - w[0]))
                .min()
                .unwrap();
            let room = f_total - 1 - gt.cuts().last().unwrap();
            let limit = (min_gap.saturating_sub(1) / 2).min(room);
            if limit >= 1 {
                let delta = rng.random_range(1..=limit);
                let shifted = CutList::new(f_total, gt.cuts().iter().map(|c| c + delta).collect()).unwrap();
                let rs = shot_cut_accuracy(&shifted, &gt, PenaltyPolicy::default()).unwrap();
                if rs.pairs.len() == gt.cuts().len() {
                    shift_checked += 1;
                    let k = gt.cuts().len();
                    if rs.nsd != (k * delta) as f64 / f_total as f64 {
                        failures.push(format!("trial {trial}: shift nsd {} != k*delta/F", rs.nsd));
                    }
                }
            }
        }
    }
    let ok = examples_ok && failures.is_empty() && monotone_checked > 100 && shift_checked > 100;
    report(
        "AC-5",
        "SCA worked examples and randomized properties",
        ok,
        format!(
            "sca {:.5} and {:.5}; {trials} random cut-list pairs, {monotone_checked} monotonicity and \
             {shift_checked} shift checks, {} failures {:?}",
            near.sca,
            missing.sca,
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn ac6_synthetic_cut_detection_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let threshold = 0.15;
    let mut runs = 0;
    let mut failures = Vec::new();
    for k in 1..=12usize {
        for _ in 0..10 {
            let f_total = rng.random_range(40 * (k + 1)..=120 * (k + 1));
            // K cuts with at least 4 frames per shot
            let mut cuts: Vec<usize>;
            loop {
                cuts = rand::seq::index::sample(&mut rng, f_total - 1, k)
                    .into_iter()
                    .map(|c| c + 1)
                    .collect();
                cuts.sort_unstable();
                let bounds: Vec<usize> = std::iter::once(0).chain(cuts.iter().copied()).chain([f_total]).collect();
                if bounds.windows(2).all(|w| w[1] - w[0] >= 4) {
                    break;
                }
            }
            let gt = CutList::new(f_total, cuts.clone()).unwrap();
            let mut signal = Vec::with_capacity(f_total);
            let mut shot = 0;
            let mut level: f64 = rng.random_range(0.1..0.3);
            for t in 0..f_total {
                if shot < cuts.len() && t == cuts[shot] {
                    shot += 1;
                    level = if level < 0.5 {
                        rng.random_range(0.65..0.9)
                    } else {
                        rng.random_range(0.1..0.35)
                    };
                }
                signal.push(level + rng.random_range(-0.02..0.02));
            }
            let detected = detect_cuts(&signal, threshold).unwrap();
            let sca = shot_cut_accuracy(&detected, &gt, PenaltyPolicy::default()).unwrap().sca;
            runs += 1;
            if detected != gt || sca != 1.0 {
                failures.push(format!("K={k}: detected {:?} vs {:?}, sca {sca}", detected.cuts(), cuts));
            }
        }
    }
    report(
        "AC-6",
        "luminance cut detection recovers K known cuts with SCA = 1",
        failures.is_empty(),
        format!("{runs} signals with K in 1..=12, {} failures {:?}", failures.len(), failures.first()),
    );
}

fn random_stream(rng: &mut ChaCha8Rng) -> Vec<SourceShot> {
    let fps = *[24.0, 25.0, 30.0].choose(rng).unwrap();
    let n = rng.random_range(0..120);
    let mut start = rng.random_range(0..1000u64);
    (0..n)
        .map(|i| {
            let frames = rng.random_range(6..(fps as u64) * 12);
            let s = SourceShot {
                id: format!("s{i}"),
                source_id: "film".into(),
                start_frame: start,
                end_frame: start + frames,
                fps,
                mean_luminance: rng.random_range(0.0..1.0),
                aesthetic_score: None,
                caption: None,
            };
            start += frames;
            s
        })
        .collect()
}

fn random_prompt_text(rng: &mut ChaCha8Rng, words: std::ops::Range<usize>) -> String {
    let words = rng.random_range(words);
    const VOCAB: &[&str] = &[
        "A", "man", "walks", "[shot", "cut]", "shot", "cut", "[", "]", "close-up.", "wide", "Scene",
        "\t", "  ", "tracking", "ü", "🎬", ",", ".", "[shot]", "cut]]",
    ];
    (0..words).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

#[test]
fn ac7_curation_assembly_and_prompt_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = Vec::new();
    let mut emitted = 0;
    for stream_idx in 0..1000 {
        let shots = random_stream(&mut rng);
        let tier = *[5.0, 15.0, 60.0].choose(&mut rng).unwrap();
        let tol = 0.2 * tier;
        let samples = assemble_samples(&shots, tier, tol, 13).unwrap();
        emitted += samples.len();
        let mut last_end: Option<u64> = None;
        for s in &samples {
            let total: f64 = s.shots.iter().map(SourceShot::duration_seconds).sum();
            let contiguous = s.shots.windows(2).all(|w| w[1].start_frame == w[0].end_frame && w[1].source_id == w[0].source_id);
            let ordered = last_end.is_none_or(|e| s.shots[0].start_frame >= e);
            if !(s.total_duration >= tier - tol && s.total_duration <= tier + tol)
                || (total - s.total_duration).abs() > 1e-9
                || s.shots.len() > 13
                || s.shots.is_empty()
                || !contiguous
                || !ordered
            {
                violations.push(format!("stream {stream_idx}: bad sample {:?}", s.shots.iter().map(|x| &x.id).collect::<Vec<_>>()));
            }
            last_end = s.shots.last().map(|x| x.end_frame);
        }
    }

    let mut round_trips = 0;
    let mut rt_failures = 0;
    while round_trips < 1000 {
        let global = random_prompt_text(&mut rng, 0..8);
        let n = rng.random_range(1..=13);
        let per_shot: Vec<String> = (0..n).map(|_| random_prompt_text(&mut rng, 1..6)).collect();
        let Ok(prompt) = HierarchicalPrompt::new(global, per_shot) else {
            continue;
        };
        round_trips += 1;
        let text = prompt.render().unwrap();
        if HierarchicalPrompt::parse(&text).ok().as_ref() != Some(&prompt) {
            rt_failures += 1;
        }
    }
    let ok = violations.is_empty() && emitted > 1000 && rt_failures == 0;
    report(
        "AC-7",
        "assembly emits only valid samples; prompt format round-trips",
        ok,
        format!(
            "1000 streams, {emitted} samples, {} violations; {round_trips} prompts, {rt_failures} round-trip failures",
            violations.len()
        ),
    );
}

#[test]
fn ac8_degeneracies() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut single_worst: f64 = 0.0;
    let mut all_worst: f64 = 0.0;
    let mut literal_ok = true;
    for _ in 0..50 {
        let d = rng.random_range(4..=32);
        let single = TokenLayout::uniform(1, ShotSpec::new(rng.random_range(1..=4), rng.random_range(1..=8)).unwrap()).unwrap();
        let l = single.total_tokens();
        let q: Matrix = Matrix::random_normal(l, d, &mut rng);
        let k = Matrix::random_normal(l, d, &mut rng);
        let v = Matrix::random_normal(l, d, &mut rng);
        let plan = SparsePlan::new(&single, SummaryStrategy::FirstFrame, PlanMode::Dedupe).unwrap();
        let sparse = sparse_self_attention(&q, &k, &v, &plan).unwrap();
        let full = masked_dense_attention(&q, &k, &v, &BoolMask::filled(l, l, true), default_scale(d)).unwrap();
        single_worst = single_worst.max(sparse.max_abs_diff(&full).unwrap());

        let n = rng.random_range(2..=6);
        let layout = TokenLayout::new(
            (0..n)
                .map(|_| ShotSpec::new(rng.random_range(1..=4), rng.random_range(1..=8)).unwrap())
                .collect(),
        )
        .unwrap();
        let l = layout.total_tokens();
        let q: Matrix = Matrix::random_normal(l, d, &mut rng);
        let k = Matrix::random_normal(l, d, &mut rng);
        let v = Matrix::random_normal(l, d, &mut rng);
        let everything = SparsePlan::new(&layout, SummaryStrategy::all_tokens(&layout), PlanMode::Dedupe).unwrap();
        let sparse = sparse_self_attention(&q, &k, &v, &everything).unwrap();
        let full = dense_attention(&q, &k, &v, default_scale(d)).unwrap();
        all_worst = all_worst.max(sparse.max_abs_diff(&full).unwrap());

        for strategy in [SummaryStrategy::FirstFrame, SummaryStrategy::FirstAndLastFrame] {
            let dedupe = SparsePlan::new(&layout, strategy.clone(), PlanMode::Dedupe).unwrap();
            let literal = SparsePlan::new(&layout, strategy, PlanMode::Literal).unwrap();
            for shot in 0..n {
                let s = dedupe.summaries()[shot].len();
                literal_ok &= literal.kv_list(shot).len() == dedupe.kv_list(shot).len() + s;
            }
        }
    }
    let ok = single_worst <= 1e-12 && all_worst <= 1e-10 && literal_ok;
    report(
        "AC-8",
        "single shot and all-token summaries reduce to dense attention; literal adds S keys",
        ok,
        format!("single-shot max diff {single_worst:.2e}, all-token max diff {all_worst:.2e}, literal counts ok: {literal_ok}"),
    );
}
