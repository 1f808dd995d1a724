//! Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p lesionprompt-core --test acceptance`.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use lesionprompt_core::edt::{quantize_spacing, squared_depth_fixed, squared_edt_fixed, fixed_to_mm};
use lesionprompt_core::harness::evaluate_loaded;
use lesionprompt_core::io::nifti::{encode_nifti, parse_nifti, read_nifti, write_nifti, NiftiDtype};
use lesionprompt_core::io::prompts_file::{read_prompts, write_prompts, PromptsFile};
use lesionprompt_core::io::report::{parse_report_csv, report_from_json, report_to_csv, report_to_json, REPORT_CHECK_TOLERANCE};
use lesionprompt_core::metrics::{auc, connected_components, dice, fn_volume, fp_volume};
use lesionprompt_core::phantom::{cohort_ids, generate_phantom, PhantomConfig};
use lesionprompt_core::prompts::{render_edt, render_gaussian};
use lesionprompt_core::simulate::{count_probabilities, sample_click_count, ClickSampler, CountLaw, Placement};
use lesionprompt_core::{
    edt_to_set, evaluate_cohort, interior_depth, ClickSet, Connectivity, Dataset, EvalConfig, Grid, MaskVolume, Polarity,
    SimConfig, Shape, Spacing, Volume3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_shape(r: &mut ChaCha8Rng, max: usize) -> Shape {
    Shape::new(r.random_range(1..=max), r.random_range(1..=max), r.random_range(1..=max)).unwrap()
}

fn random_spacing(r: &mut ChaCha8Rng) -> Spacing {
    Spacing::new(r.random_range(0.3..5.0), r.random_range(0.3..5.0), r.random_range(0.3..5.0)).unwrap()
}

fn random_mask(r: &mut ChaCha8Rng, shape: Shape, spacing: Spacing, density: f64) -> MaskVolume {
    let data = (0..shape.len()).map(|_| r.random_bool(density)).collect();
    MaskVolume::new(shape, spacing, data).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- EDT

fn brute_squared(mask: &MaskVolume, q: [i128; 3], source: impl Fn(usize) -> bool, coords: impl Fn(usize) -> [i64; 3], n: usize) -> Vec<i128> {
    let sources: Vec<[i64; 3]> = (0..n).filter(|&i| source(i)).map(&coords).collect();
    (0..mask.shape().len())
        .map(|i| {
            let p = mask.shape().coords(i).map(|c| c as i64 + 1);
            sources
                .iter()
                .map(|s| (0..3).map(|a| ((p[a] - s[a]) as i128 * q[a]).pow(2)).sum::<i128>())
                .min()
                .unwrap()
        })
        .collect()
}

fn edt_exactness() -> Outcome {
    let mut r = rng(0xed7);
    let masks: Vec<MaskVolume> = (0..240)
        .map(|i| {
            let shape = random_shape(&mut r, 12);
            let spacing = random_spacing(&mut r);
            let density = [0.02, 0.1, 0.4, 0.9][i % 4];
            let mut m = random_mask(&mut r, shape, spacing, density);
            if m.is_empty() {
                let at = r.random_range(0..shape.len());
                let mut d = m.data().to_vec();
                d[at] = true;
                m = MaskVolume::new(shape, spacing, d).unwrap();
            }
            m
        })
        .collect();

    let start = Instant::now();
    let fields: Vec<(Vec<i128>, Vec<i128>, Vec<f32>)> = masks
        .iter()
        .map(|m| {
            let s = m.spacing();
            (
                squared_edt_fixed(m, s).unwrap(),
                squared_depth_fixed(m, s),
                edt_to_set(m, s).unwrap().data().to_vec(),
            )
        })
        .collect();
    let elapsed = start.elapsed();

    for (k, (m, (d2, depth2, mm))) in masks.iter().zip(&fields).enumerate() {
        let q = quantize_spacing(m.spacing());
        let shape = m.shape();
        let inner = |i: usize| shape.coords(i).map(|c| c as i64 + 1);
        let want = brute_squared(m, q, |i| m.data()[i], inner, shape.len());
        ensure(&want == d2, || format!("mask {k}: squared distance differs from brute force"))?;
        let want_mm: Vec<f32> = want.iter().map(|&v| fixed_to_mm(v)).collect();
        ensure(
            want_mm.iter().zip(mm).all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("mask {k}: millimetre field not bit-identical"),
        )?;
        // interior depth against the nearest background or frame voxel
        let [nz, ny, nx] = shape.as_array();
        let padded = Shape::new(nz + 2, ny + 2, nx + 2).unwrap();
        let frame_or_bg = |i: usize| {
            let [z, y, x] = padded.coords(i);
            let interior = (1..=nz).contains(&z) && (1..=ny).contains(&y) && (1..=nx).contains(&x);
            !(interior && m.data()[shape.index([z - 1, y - 1, x - 1])])
        };
        let pc = |i: usize| padded.coords(i).map(|c| c as i64);
        let want_depth: Vec<i128> = brute_squared(m, q, frame_or_bg, pc, padded.len())
            .into_iter()
            .zip(m.data())
            .map(|(d, &fg)| if fg { d } else { 0 })
            .collect();
        ensure(&want_depth == depth2, || format!("mask {k}: interior depth differs from brute force"))?;
        let via_api = interior_depth(m, m.spacing());
        ensure(
            via_api.data().iter().zip(&want_depth).all(|(a, &b)| a.to_bits() == fixed_to_mm(b).to_bits()),
            || format!("mask {k}: interior_depth not bit-identical"),
        )?;
    }
    ensure(elapsed < Duration::from_secs(5), || format!("implementation took {elapsed:?} (limit 5 s)"))?;
    Ok(format!("{} masks up to 12^3, anisotropic spacing, implementation {:.2?} < 5 s", masks.len(), elapsed))
}

// ---------------------------------------------------------------- metrics

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn oracle_roots(m: &MaskVolume, max_nonzero: usize) -> Vec<Option<usize>> {
    let shape = m.shape();
    let mut dsu = Dsu((0..shape.len()).collect());
    for i in 0..shape.len() {
        if !m.data()[i] {
            continue;
        }
        let p = shape.coords(i);
        for j in 0..shape.len() {
            if j <= i || !m.data()[j] {
                continue;
            }
            let q = shape.coords(j);
            let d: Vec<usize> = (0..3).map(|a| p[a].abs_diff(q[a])).collect();
            let nonzero = d.iter().filter(|&&v| v != 0).count();
            if d.iter().all(|&v| v <= 1) && nonzero <= max_nonzero {
                dsu.union(i, j);
            }
        }
    }
    (0..shape.len()).map(|i| m.data()[i].then(|| dsu.find(i))).collect()
}

fn oracle_unmatched(of: &MaskVolume, against: &MaskVolume, max_nonzero: usize) -> usize {
    let roots = oracle_roots(of, max_nonzero);
    let mut size: HashMap<usize, usize> = HashMap::new();
    let mut touched: HashMap<usize, bool> = HashMap::new();
    for (i, r) in roots.iter().enumerate() {
        if let Some(r) = *r {
            *size.entry(r).or_default() += 1;
            *touched.entry(r).or_default() |= against.data()[i];
        }
    }
    size.iter().filter(|(r, _)| !touched[r]).map(|(_, s)| s).sum()
}

fn metric_oracles() -> Outcome {
    let mut r = rng(0x3e7);
    let n_pairs = 520;
    let conns = [(Connectivity::Six, 1), (Connectivity::Eighteen, 2), (Connectivity::TwentySix, 3)];
    for k in 0..n_pairs {
        let shape = random_shape(&mut r, if k % 5 == 0 { 12 } else { 7 });
        let spacing = random_spacing(&mut r);
        let dp = r.random_range(0.0..0.6);
        let dg = r.random_range(0.0..0.6);
        let p = random_mask(&mut r, shape, spacing, dp);
        let g = random_mask(&mut r, shape, spacing, dg);

        let (mut inter, np, ng) = (
            0usize,
            p.data().iter().filter(|&&b| b).count(),
            g.data().iter().filter(|&&b| b).count(),
        );
        for (a, b) in p.data().iter().zip(g.data()) {
            inter += (*a && *b) as usize;
        }
        let want_dice = if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
        ensure(dice(&p, &g).unwrap() == want_dice, || format!("pair {k}: dice"))?;

        let (conn, max_nonzero) = conns[k % 3];
        let vv = spacing.voxel_volume();
        let fp = fp_volume(&p, &g, spacing, conn).unwrap();
        let fnv = fn_volume(&p, &g, spacing, conn).unwrap();
        ensure(fp == oracle_unmatched(&p, &g, max_nonzero) as f64 * vv, || format!("pair {k}: fp_volume"))?;
        ensure(fnv == oracle_unmatched(&g, &p, max_nonzero) as f64 * vv, || format!("pair {k}: fn_volume"))?;
        ensure(fp == fn_volume(&g, &p, spacing, conn).unwrap(), || format!("pair {k}: fp(P,G) != fn(G,P)"))?;

        // labelling induces the same partition as union-find
        let lab = connected_components(&p, conn);
        let roots = oracle_roots(&p, max_nonzero);
        let mut fwd: HashMap<u32, usize> = HashMap::new();
        let mut back: HashMap<usize, u32> = HashMap::new();
        for (i, root) in roots.iter().enumerate() {
            let l = lab.label_at(i);
            match root {
                None => ensure(l == 0, || format!("pair {k}: background voxel labelled"))?,
                Some(root) => {
                    ensure(l != 0, || format!("pair {k}: foreground voxel unlabelled"))?;
                    ensure(*fwd.entry(l).or_insert(*root) == *root, || format!("pair {k}: label spans two components"))?;
                    ensure(*back.entry(*root).or_insert(l) == l, || format!("pair {k}: component split across labels"))?;
                }
            }
        }
        ensure(lab.components.len() == back.len(), || format!("pair {k}: component count"))?;
    }
    Ok(format!("{n_pairs} random pairs up to 12^3, 6/18/26-connectivity, fp(P,G) == fn(G,P) on all"))
}

// ---------------------------------------------------------------- encodings

fn encoding_contracts() -> Outcome {
    let spacings = [Spacing::UNIT, Spacing::new(3.0, 2.04, 2.04).unwrap(), Spacing::new(0.7, 1.3, 2.1).unwrap()];
    let mut checked = 0usize;
    for spacing in spacings {
        for use_mm in [false, true] {
            for sigma in [0.3, 0.5, 1.0, 1.7, 3.0] {
                let grid = Grid::new(Shape::cube(41).unwrap(), spacing);
                let ch = render_gaussian(&[[20, 20, 20]], sigma, use_mm, grid).unwrap();
                ensure((ch.sum() - 1.0).abs() <= 1e-6, || format!("gaussian sigma {sigma} use_mm {use_mm}: sum {}", ch.sum()))?;
                checked += 1;
            }
        }
    }

    // edt: exhaustive value check on small grids
    for (n, spacing) in [(7usize, Spacing::UNIT), (9, Spacing::new(3.0, 2.0, 1.0).unwrap())] {
        for use_mm in [false, true] {
            for size in [0.5, 1.0, 2.0, 3.5] {
                let shape = Shape::cube(n).unwrap();
                let c = [n / 2, n / 2 - 1, n / 2 + 1];
                let ch = render_edt(&[c], size, use_mm, Grid::new(shape, spacing)).unwrap();
                ensure(ch.get(c) == 1.0, || "edt value at click is not 1.0".into())?;
                for i in 0..shape.len() {
                    let p = shape.coords(i);
                    let s = if use_mm { spacing.as_array() } else { [1.0; 3] };
                    let d = (0..3).map(|a| ((p[a] as f64 - c[a] as f64) * s[a]).powi(2)).sum::<f64>().sqrt();
                    let v = ch.data()[i];
                    if d >= size {
                        ensure(v == 0.0, || format!("edt size {size}: nonzero {v} at distance {d}"))?;
                    } else {
                        ensure(v == (1.0 - d / size) as f32, || format!("edt size {size}: value {v} at distance {d}"))?;
                    }
                    checked += 1;
                }
            }
        }
    }

    // translation equivariance, bit-exact
    let mut r = rng(0x7a5);
    for _ in 0..60 {
        let shape = Shape::new(20, 22, 24).unwrap();
        let grid = Grid::new(shape, Spacing::new(2.0, 1.0, 1.5).unwrap());
        let clicks: Vec<[usize; 3]> = (0..r.random_range(1..5))
            .map(|_| [r.random_range(5..10), r.random_range(5..10), r.random_range(5..10)])
            .collect();
        let t = [r.random_range(0..6), r.random_range(0..6), r.random_range(0..6)];
        let moved: Vec<[usize; 3]> = clicks.iter().map(|c| [c[0] + t[0], c[1] + t[1], c[2] + t[2]]).collect();
        let use_mm = r.random_bool(0.5);
        for (a, b) in [
            (render_gaussian(&clicks, 1.2, use_mm, grid).unwrap(), render_gaussian(&moved, 1.2, use_mm, grid).unwrap()),
            (render_edt(&clicks, 3.0, use_mm, grid).unwrap(), render_edt(&moved, 3.0, use_mm, grid).unwrap()),
        ] {
            for z in 0..14 {
                for y in 0..16 {
                    for x in 0..18 {
                        let va = a.get([z, y, x]);
                        let vb = b.get([z + t[0], y + t[1], x + t[2]]);
                        ensure(va.to_bits() == vb.to_bits(), || format!("translation by {t:?} changed a value"))?;
                    }
                }
            }
        }
    }
    Ok(format!("gaussian sums 30 kernels within 1e-6; {checked} exhaustive voxel checks; 60 translations bit-exact"))
}

// ---------------------------------------------------------------- simulator

fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

fn simulator_statistics() -> Outcome {
    let cfg = SimConfig::default();
    let probs = count_probabilities(CountLaw::LogFavorFew, 10);
    ensure((probs[0] - 0.33114).abs() < 5e-6, || format!("P(0) = {}", probs[0]))?;
    ensure((probs[10] - 0.03010).abs() < 5e-6, || format!("P(10) = {}", probs[10]))?;

    // count law
    let n = 100_000u64;
    let mut r = rng(0xc0);
    let mut counts = vec![0u64; 11];
    for _ in 0..n {
        counts[sample_click_count(&cfg, &mut r)] += 1;
    }
    let expected: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let p_count = chi_square_p(&counts, &expected);
    ensure(p_count > 0.01, || format!("count law chi-square p = {p_count}"))?;

    // placement contract on random masks and phantoms
    let mut violations = 0usize;
    let mut calls = 0usize;
    let mut masks: Vec<MaskVolume> = (0..120)
        .map(|k| {
            let shape = random_shape(&mut r, 16);
            let sp = random_spacing(&mut r);
            random_mask(&mut r, shape, sp, [0.0, 0.02, 0.2, 0.6][k % 4])
        })
        .collect();
    masks.extend((0..6).map(|i| generate_phantom(&PhantomConfig::default(), 5, &format!("s{i}")).unwrap().gt));
    for m in &masks {
        let sampler = ClickSampler::new(m, &cfg).unwrap();
        for _ in 0..40 {
            let (set, _) = sampler.simulate(&mut r).unwrap();
            calls += 1;
            violations += set.foreground().iter().filter(|&&p| !m.get(p)).count();
            violations += set.background().iter().filter(|&&p| m.get(p)).count();
            violations += (set.foreground().len() > 10 || set.background().len() > 10) as usize;
        }
    }
    ensure(violations == 0, || format!("{violations} placement violations"))?;

    // custom sampler depth weighting
    let mut depth_ps = Vec::new();
    for (n_side, spacing, exponent) in [
        (7usize, Spacing::UNIT, 1.0),
        (9, Spacing::new(2.0, 1.0, 1.0).unwrap(), 1.0),
        (8, Spacing::UNIT, 2.0),
    ] {
        let shape = Shape::cube(n_side + 2).unwrap();
        let data = (0..shape.len())
            .map(|i| shape.coords(i).iter().all(|&c| (1..=n_side).contains(&c)))
            .collect();
        let cube = MaskVolume::new(shape, spacing, data).unwrap();
        let scfg = SimConfig {
            core_weight_exponent: exponent,
            ..cfg
        };
        let sampler = ClickSampler::new(&cube, &scfg).unwrap();
        let depth = sampler.depth().data().to_vec();
        let mut bins: Vec<u32> = cube.foreground().map(|i| depth[i].to_bits()).collect();
        bins.sort_unstable_by(|a, b| f32::from_bits(*a).total_cmp(&f32::from_bits(*b)));
        bins.dedup();
        let bin_of: HashMap<u32, usize> = bins.iter().enumerate().map(|(k, &b)| (b, k)).collect();
        let mut weight = vec![0.0f64; bins.len()];
        for i in cube.foreground() {
            weight[bin_of[&depth[i].to_bits()]] += (depth[i] as f64).powf(exponent);
        }
        let total: f64 = weight.iter().sum();
        let mut obs = vec![0u64; bins.len()];
        let draws = 100_000u64;
        for _ in 0..draws {
            let c = sampler.custom(1, Polarity::Foreground, &mut r).unwrap();
            let i = shape.index(c[0].pos);
            obs[bin_of[&depth[i].to_bits()]] += 1;
        }
        let exp: Vec<f64> = weight.iter().map(|w| w / total * draws as f64).collect();
        let p = chi_square_p(&obs, &exp);
        ensure(p > 0.01, || format!("custom depth chi-square p = {p} (cube {n_side}, exponent {exponent})"))?;
        depth_ps.push(p);
    }

    // 80/20 branch mix
    let gt = generate_phantom(&PhantomConfig::default(), 1, "mix").unwrap().gt;
    let sampler = ClickSampler::new(&gt, &cfg).unwrap();
    let (mut custom_fg, mut custom_bg) = (0usize, 0usize);
    let mix_calls = 10_000;
    for _ in 0..mix_calls {
        let (_, trace) = sampler.simulate(&mut r).unwrap();
        custom_fg += (trace.foreground == Placement::Custom) as usize;
        custom_bg += (trace.background == Placement::Custom) as usize;
    }
    let (f_fg, f_bg) = (custom_fg as f64 / mix_calls as f64, custom_bg as f64 / mix_calls as f64);
    ensure((0.17..=0.23).contains(&f_fg) && (0.17..=0.23).contains(&f_bg), || {
        format!("custom-branch frequency fg {f_fg}, bg {f_bg} outside [0.17, 0.23]")
    })?;

    Ok(format!(
        "count chi-square p={p_count:.3}; 0 violations in {calls} calls; depth chi-square p={}; custom share fg {f_fg:.4} bg {f_bg:.4}",
        depth_ps.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join("/")
    ))
}

// ---------------------------------------------------------------- trend

fn refinement_trend() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let n = 20;
    for id in cohort_ids(n) {
        generate_phantom(&PhantomConfig::default(), 0, &id)
            .and_then(|p| p.write(dir.path()))
            .map_err(|e| e.to_string())?;
    }
    let cfg = EvalConfig::default();
    let start = Instant::now();
    let dataset = Dataset::discover(dir.path()).map_err(|e| e.to_string())?;
    let report = evaluate_cohort(&dataset, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(report.failures.is_empty() && report.cases.len() == n, || format!("{} failures", report.failures.len()))?;
    let b0 = report.budgets.iter().position(|&b| b == 0).ok_or("no budget 0")?;
    let b10 = report.budgets.iter().position(|&b| b == 10).ok_or("no budget 10")?;
    let (m0, m10) = (report.cohort.means[b0], report.cohort.means[b10]);
    let summary = format!(
        "{n} phantoms: Dice {:.3} -> {:.3}, FNvol {:.1} -> {:.1} mm3, FPvol {:.1} -> {:.1} mm3, {:.2?}",
        m0.dice, m10.dice, m0.fnvol_mm3, m10.fnvol_mm3, m0.fpvol_mm3, m10.fpvol_mm3, elapsed
    );
    ensure(m10.fnvol_mm3 < m0.fnvol_mm3, || format!("FNvol did not fall; {summary}"))?;
    ensure(m10.fpvol_mm3 < m0.fpvol_mm3, || format!("FPvol did not fall; {summary}"))?;
    ensure(m10.dice > m0.dice, || format!("Dice did not rise; {summary}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("too slow; {summary}"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- AUC

fn auc_values() -> Outcome {
    let v = auc(&[0, 3, 7, 10], &[0.0, 0.3, 0.7, 1.0]).map_err(|e| e.to_string())?;
    ensure(v == 0.5, || format!("ramp AUC = {v:?}"))?;
    for c in [0.0, 0.25, 0.7635, 3.0, 1234.5] {
        let v = auc(&[0, 3, 7, 10], &[c; 4]).map_err(|e| e.to_string())?;
        ensure(v == c, || format!("constant {c} gives {v:?}"))?;
    }
    Ok("ramp [0,0.3,0.7,1] over [0,3,7,10] = 0.5 exactly; constants preserved".into())
}

// ---------------------------------------------------------------- determinism

fn determinism() -> Outcome {
    let base = EvalConfig {
        seed: 17,
        ..EvalConfig::default()
    };
    let cases: Vec<_> = cohort_ids(10)
        .iter()
        .map(|id| generate_phantom(&PhantomConfig::default(), 2, id).and_then(|p| p.into_loaded(&base.ct_normalization)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for workers in [1, 2, 8] {
        let cfg = EvalConfig { workers, ..base.clone() };
        let report = evaluate_loaded(&cases, &cfg).map_err(|e| e.to_string())?;
        outputs.push((report_to_json(&report).unwrap(), report_to_csv(&report).unwrap()));
    }
    ensure(outputs.windows(2).all(|w| w[0] == w[1]), || "reports differ across worker counts".into())?;
    Ok(format!("10 cases, workers 1/2/8 give identical JSON ({} bytes) and CSV", outputs[0].0.len()))
}

// ---------------------------------------------------------------- I/O

fn io_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(0x10);
    let shape = Shape::new(5, 6, 7).unwrap();
    let spacing = Spacing::new(3.0, 2.04, 1.5).unwrap();
    let dtypes = [NiftiDtype::U8, NiftiDtype::I16, NiftiDtype::U16, NiftiDtype::F32, NiftiDtype::F64];
    for dtype in dtypes {
        let data: Vec<f32> = (0..shape.len())
            .map(|_| match dtype {
                NiftiDtype::U8 => r.random_range(0..=255) as f32,
                NiftiDtype::I16 => r.random_range(-32768..=32767) as f32,
                NiftiDtype::U16 => r.random_range(0..=65535) as f32,
                _ => r.random_range(-1e6f32..1e6),
            })
            .collect();
        let v = Volume3::new(shape, spacing, data).unwrap().with_origin([-10.5, 3.25, 7.0]);
        for ext in ["nii", "nii.gz"] {
            let path = dir.path().join(format!("v_{dtype:?}.{ext}"));
            write_nifti(&v, &path, dtype, false).map_err(|e| e.to_string())?;
            let back = read_nifti(&path).map_err(|e| e.to_string())?;
            ensure(back.shape() == shape && back.spacing() == spacing, || format!("{dtype:?} {ext}: grid changed"))?;
            ensure(back.origin() == v.origin(), || format!("{dtype:?} {ext}: origin changed"))?;
            ensure(
                back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
                || format!("{dtype:?} {ext}: data changed"),
            )?;
        }
    }

    // scl_slope = 2, scl_inter = 1 on stored 3
    let three = Volume3::filled(shape, spacing, 3.0);
    let mut bytes = encode_nifti(&three, NiftiDtype::I16, false).map_err(|e| e.to_string())?;
    bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
    bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
    let (scaled, _) = parse_nifti(&bytes).map_err(|e| e.to_string())?;
    ensure(scaled.data().iter().all(|&x| x == 7.0), || "scl_slope/scl_inter not applied".into())?;

    // prompts
    for k in 0..50 {
        let grid = Grid::new(shape, spacing);
        let mut clicks = ClickSet::default();
        for _ in 0..r.random_range(0..=10) {
            let _ = clicks.push(Polarity::Foreground, [r.random_range(0..5), r.random_range(0..6), r.random_range(0..7)]);
        }
        for _ in 0..r.random_range(0..=10) {
            let _ = clicks.push(Polarity::Background, [r.random_range(0..5), r.random_range(0..6), r.random_range(0..7)]);
        }
        let path = dir.path().join(format!("p{k}.json"));
        write_prompts(&path, &PromptsFile::from_clicks("c", &clicks, Some(&grid))).map_err(|e| e.to_string())?;
        let back = read_prompts(&path, &grid).map_err(|e| e.to_string())?;
        ensure(back == clicks, || format!("prompts {k}: click set changed"))?;
    }

    // reports
    let cfg = EvalConfig::default();
    let cases: Vec<_> = cohort_ids(4)
        .iter()
        .map(|id| generate_phantom(&PhantomConfig::default(), 9, id).and_then(|p| p.into_loaded(&cfg.ct_normalization)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let report = evaluate_loaded(&cases, &cfg).map_err(|e| e.to_string())?;
    let text = report_to_json(&report).map_err(|e| e.to_string())?;
    let back = report_from_json(&text).map_err(|e| e.to_string())?;
    ensure(back == report, || "report JSON round trip changed the report".into())?;
    back.check_consistency(REPORT_CHECK_TOLERANCE).map_err(|e| e.to_string())?;
    let rows = parse_report_csv(&report_to_csv(&report).unwrap()).map_err(|e| e.to_string())?;
    ensure(rows.len() == 4 * report.budgets.len(), || "CSV row count".into())?;
    Ok("NIfTI u8/i16/u16/f32/f64 x .nii/.nii.gz bit-exact; slope 2, inter 1: 3 -> 7; 50 prompt files; report JSON/CSV".into())
}

// ---------------------------------------------------------------- build

fn no_secondary_component() -> Outcome {
    let manifest = include_str!("../Cargo.toml");
    let deps = manifest.split("[dependencies]").nth(1).unwrap_or("");
    ensure(!deps.contains("lesionprompt"), || "core depends on another workspace crate".into())?;
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for artefact in ["webui/node_modules", "webui/dist", "crates/webui"] {
        ensure(!root.join(artefact).exists(), || format!("{artefact} exists"))?;
    }
    Ok("this suite links only lesionprompt-core; no web UI build present".into())
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("edt-exactness", edt_exactness),
        ("metric-oracles", metric_oracles),
        ("encoding-contracts", encoding_contracts),
        ("simulator-statistics", simulator_statistics),
        ("refinement-trend", refinement_trend),
        ("auc", auc_values),
        ("determinism", determinism),
        ("io-round-trips", io_round_trips),
        ("no-secondary-component", no_secondary_component),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.2?}]", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{:.2?}]", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
