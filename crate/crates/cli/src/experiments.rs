//! The eight experiments. Each returns a [`ResultTable`] whose rows depend
//! only on the resolved config.

use shadowflow::dynamics::{backward_orbit, forward_orbit, orbit_deviation, AffineMap, Direction, FlowMap, Repeated};
use shadowflow::estimators::{
    density_error_bound, mixflow_elbo_estimate, mixflow_log_density, relative_error, sample_one, LipschitzConfig,
    MixFlowModel, TestFunction,
};
use shadowflow::mixflow::{MixFlowMap, RefreshParams};
use shadowflow::parallel::par_map;
use shadowflow::precision::{demote, ExtFloat};
use shadowflow::shadowing::{
    assemble_blocks, assemble_joint_blocks, diagnose, estimate_m_per_point, lambda_min_blocktridiag,
    scaling_map_epsilon, shadowing_window, single_step_gaps, BlockSequence, CurvatureConfig, ShadowingReport,
};
use shadowflow::stats::Summary;
use shadowflow::targets::{
    banana_target, cross_target, fit_meanfield_reference, linreg_target, load_regression_dataset, logreg_target,
    DatasetSpec, DiagGaussian, FitConfig, LogDensity, Target,
};
use shadowflow::{make_rng, PrecisionSpec, Real};

use crate::config::{ExperimentConfig, ExperimentKind, ReferenceSpec, TargetKind};
use crate::table::{Cell, ResultTable};
use crate::CliError;

/// Stream reserved for fitting the reference.
pub const FIT_STREAM: u64 = u64::MAX;

/// Target, flow map and augmented reference built from a resolved config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub target: Target,
    pub map: MixFlowMap<Target>,
    /// Reference on `[x; rho]`.
    pub reference: DiagGaussian,
    pub spec: PrecisionSpec,
}

impl Setup {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let target: Target = match cfg.target {
            TargetKind::Banana => banana_target(0.1, 100.0)?.into(),
            TargetKind::Cross => cross_target().into(),
            TargetKind::Gaussian => DiagGaussian::standard(2).into(),
            TargetKind::Linreg | TargetKind::Logreg => {
                let path = cfg.dataset_path.as_ref().expect("validated");
                if cfg.target == TargetKind::Linreg {
                    linreg_target(&load_regression_dataset(path, &DatasetSpec::boston())?)?.into()
                } else {
                    logreg_target(&load_regression_dataset(path, &DatasetSpec::bank())?)?.into()
                }
            }
        };
        let d = target.dim();
        let refresh = RefreshParams {
            offset: cfg.refresh_offset.expect("resolved"),
            amplitude: cfg.refresh_amplitude.expect("resolved"),
            ..RefreshParams::standard(d)
        };
        let reference = match cfg.reference.as_ref().expect("resolved") {
            ReferenceSpec::Named(n) if n == "standard" => DiagGaussian::standard(d),
            ReferenceSpec::Named(_) => {
                let fit = FitConfig {
                    steps: cfg.fit_steps.expect("resolved"),
                    ..FitConfig::default()
                };
                fit_meanfield_reference(&target, &fit, &mut make_rng(cfg.seed(), FIT_STREAM))?
            }
            ReferenceSpec::Inline { mean, log_std } => DiagGaussian::new(mean.clone(), log_std.clone())?,
        };
        if reference.dim() != d {
            return Err(CliError::Config(format!(
                "reference has dimension {}, target {d}",
                reference.dim()
            )));
        }
        let map = MixFlowMap::new(
            target.clone(),
            cfg.leapfrog_steps.expect("resolved"),
            cfg.step_size.expect("resolved"),
            refresh,
        )?;
        Ok(Self {
            target,
            map,
            reference: reference.augmented(),
            spec: PrecisionSpec::extended(cfg.bits())?,
        })
    }

    pub fn model(&self, len: usize) -> MixFlowModel<MixFlowMap<Target>> {
        MixFlowModel::new(self.map.clone(), self.reference.clone(), len).expect("dimensions agree")
    }

    fn lift(&self, x: &[f64]) -> Vec<ExtFloat> {
        x.iter().map(|&v| ExtFloat::with_spec(v, self.spec)).collect()
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<ResultTable, CliError> {
    match cfg.experiment {
        ExperimentKind::OracleCheck => oracle_check(cfg),
        kind => {
            let setup = Setup::build(cfg)?;
            match kind {
                ExperimentKind::OrbitError => orbit_error(cfg, &setup),
                ExperimentKind::Delta => delta(cfg, &setup),
                ExperimentKind::ShadowWindow => shadow_window(cfg, &setup),
                ExperimentKind::SamplingError => sampling_error(cfg, &setup),
                ExperimentKind::DensityError => density_error(cfg, &setup),
                ExperimentKind::ElboCurve => elbo_curve(cfg, &setup),
                ExperimentKind::InversionCheck => inversion_check(cfg, &setup),
                ExperimentKind::OracleCheck => unreachable!(),
            }
        }
    }
}

fn failure_note(e: &shadowflow::Error) {
    log::warn!("draw dropped: {e}");
}

/// Forward and backward orbit errors per step for one origin.
fn orbit_errors(setup: &Setup, x: &[f64], n: usize) -> shadowflow::Result<(Vec<f64>, Vec<f64>)> {
    let sys = Repeated::new(setup.map.clone(), n);
    let ex = setup.lift(x);
    let fwd = orbit_deviation(
        &forward_orbit(&sys, x, n)?.lifted(setup.spec),
        &forward_orbit(&sys, &ex, n)?,
    )?;
    let bwd = orbit_deviation(
        &backward_orbit(&sys, x, n)?.lifted(setup.spec),
        &backward_orbit(&sys, &ex, n)?,
    )?;
    Ok((fwd, bwd))
}

/// Quartiles of `|x_k - x̂_k|` over seeds at each requested `k`.
pub fn orbit_error(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let n = *cfg.lengths().iter().max().expect("nonempty");
    let results = par_map((0..cfg.seeds() as u64).collect(), |s| {
        let x = setup.reference.sample(&mut make_rng(cfg.seed(), s));
        orbit_errors(setup, &x, n)
    });
    let ok: Vec<_> = results
        .into_iter()
        .filter_map(|r| r.map_err(|e| failure_note(&e)).ok())
        .collect();
    let failures = cfg.seeds() - ok.len();
    let mut t = ResultTable::new(&[
        "k",
        "median_fwd",
        "q25_fwd",
        "q75_fwd",
        "median_bwd",
        "q25_bwd",
        "q75_bwd",
        "failures",
    ]);
    for &k in cfg.lengths() {
        let f: Vec<f64> = ok.iter().map(|(f, _)| f[k]).collect();
        let b: Vec<f64> = ok.iter().map(|(_, b)| b[k]).collect();
        let (sf, sb) = (summary_or_nan(&f), summary_or_nan(&b));
        t.push(vec![
            k.into(),
            sf.median.into(),
            sf.q25.into(),
            sf.q75.into(),
            sb.median.into(),
            sb.q25.into(),
            sb.q75.into(),
            failures.into(),
        ]);
    }
    Ok(t)
}

fn summary_or_nan(v: &[f64]) -> Summary {
    Summary::of(v).unwrap_or(Summary {
        count: 0,
        min: f64::NAN,
        q25: f64::NAN,
        median: f64::NAN,
        q75: f64::NAN,
        max: f64::NAN,
        mean: f64::NAN,
    })
}

/// Single-application error of `F` and `B` from reference draws.
pub fn delta(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let inputs: Vec<Vec<f64>> = (0..cfg.draws() as u64)
        .map(|i| setup.reference.sample(&mut make_rng(cfg.seed(), i)))
        .collect();
    let fwd = single_step_gaps::<_, ExtFloat>(&setup.map, &inputs, setup.spec, Direction::Forward)?;
    let bwd = single_step_gaps::<_, ExtFloat>(&setup.map, &inputs, setup.spec, Direction::Backward)?;
    let mut t = ResultTable::new(&["draw", "fwd_error", "bwd_error"]);
    for (i, (f, b)) in fwd.iter().zip(&bwd).enumerate() {
        t.push(vec![i.into(), (*f).into(), (*b).into()]);
    }
    Ok(t)
}

pub const SHADOW_COLUMNS: [&str; 11] = [
    "direction",
    "seed",
    "N",
    "m",
    "delta",
    "lambda_min",
    "lambda",
    "epsilon",
    "M_estimate",
    "existence_value",
    "existence_ok",
];

fn shadow_rows(
    blocks: &BlockSequence,
    lengths: &[usize],
    delta: f64,
    curvature: Option<&[f64]>,
) -> shadowflow::Result<Vec<ShadowingReport>> {
    lengths
        .iter()
        .map(|&n| {
            let lm = lambda_min_blocktridiag(&blocks.prefix(n)?)?;
            let m_est = curvature.map(|c| c[..n].iter().cloned().fold(0.0, f64::max));
            ShadowingReport::from_lambda_min(n, blocks.block_dim(), lm, delta, m_est)
        })
        .collect()
}

/// Shadowing windows along forward, backward and joint pseudo-orbits.
pub fn shadow_window(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let n = *cfg.lengths().iter().max().expect("nonempty");
    let probes = cfg.curvature_probes.expect("resolved");
    let per_seed = par_map((0..cfg.seeds() as u64).collect(), |s| {
        let x = setup.reference.sample(&mut make_rng(cfg.seed(), s));
        let sys = Repeated::new(setup.map.clone(), n);
        let fwd = forward_orbit(&sys, &x, n)?;
        let bwd = backward_orbit(&sys, &x, n)?;
        let sets = [
            ("forward", assemble_blocks(&sys, &fwd)?, Some(&fwd.states[..n])),
            ("backward", assemble_blocks(&sys, &bwd)?, None),
            ("joint", assemble_joint_blocks(&setup.map, &x, n)?, None),
        ];
        let mut rows = Vec::new();
        for (name, blocks, points) in sets {
            let curvature = match points {
                Some(points) if probes > 0 => {
                    let lm = lambda_min_blocktridiag(&blocks)?;
                    let radius = shadowing_window(lm, cfg.delta())?;
                    let ccfg = CurvatureConfig {
                        probes,
                        ..CurvatureConfig::default()
                    };
                    Some(estimate_m_per_point(
                        |_, y| setup.map.jacobian(y),
                        points,
                        radius,
                        &ccfg,
                    )?)
                }
                _ => None,
            };
            for r in shadow_rows(&blocks, cfg.lengths(), cfg.delta(), curvature.as_deref())? {
                rows.push((name, r));
            }
        }
        Ok::<_, shadowflow::Error>(rows)
    });
    let mut t = ResultTable::new(&SHADOW_COLUMNS);
    for (s, rows) in per_seed.into_iter().enumerate() {
        match rows {
            Ok(rows) => {
                for (name, r) in rows {
                    let mut row: Vec<Cell> = vec![name.into(), s.into()];
                    row.extend(r.csv_record().into_iter().map(report_cell));
                    t.push(row);
                }
            }
            Err(e) => failure_note(&e),
        }
    }
    Ok(t)
}

fn report_cell(s: String) -> Cell {
    if let Ok(v) = s.parse::<i64>() {
        Cell::Int(v)
    } else if let Ok(v) = s.parse::<f64>() {
        Cell::Num(v)
    } else if let Ok(b) = s.parse::<bool>() {
        Cell::Bool(b)
    } else {
        Cell::Text(s)
    }
}

/// Sample-average error of MixFlow draws against same-seed extended draws.
pub fn sampling_error(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let d = setup.target.dim();
    let mut t = ResultTable::new(&[
        "N",
        "function",
        "numerical",
        "exact",
        "relative_error",
        "exact_std_error",
        "failures",
    ]);
    for &n in cfg.lengths() {
        let model = setup.model(n);
        let pairs = par_map((0..cfg.draws() as u64).collect(), |i| {
            let a: Vec<f64> = sample_one(&model, &mut make_rng(cfg.seed(), i), PrecisionSpec::Standard64)?;
            let b: Vec<ExtFloat> = sample_one(&model, &mut make_rng(cfg.seed(), i), setup.spec)?;
            Ok::<_, shadowflow::Error>((a, demote(&b)?))
        });
        let ok: Vec<_> = pairs
            .into_iter()
            .filter_map(|r| r.map_err(|e| failure_note(&e)).ok())
            .collect();
        let failures = cfg.draws() - ok.len();
        for f in TestFunction::ALL {
            let num: Vec<f64> = ok.iter().map(|(a, _)| f.eval(&a[..d])).collect();
            let ex: Vec<f64> = ok.iter().map(|(_, b)| f.eval(&b[..d])).collect();
            let (mn, me) = (mean(&num), mean(&ex));
            t.push(vec![
                n.into(),
                f.name().into(),
                mn.into(),
                me.into(),
                relative_error(mn, me).into(),
                std_error(&ex).into(),
                failures.into(),
            ]);
        }
    }
    Ok(t)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_error(v: &[f64]) -> f64 {
    let m = mean(v);
    let n = v.len() as f64;
    if v.len() < 2 {
        return f64::NAN;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

/// Numerical vs extended MixFlow log-density at MixFlow draws.
pub fn density_error(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let with_bound = cfg.error_bound.expect("resolved");
    let mut t = ResultTable::new(&[
        "N",
        "point",
        "numerical",
        "exact",
        "abs_error",
        "relative_error",
        "bound",
        "status",
    ]);
    for &n in cfg.lengths() {
        let model = setup.model(n);
        let rows = par_map((0..cfg.draws() as u64).collect(), |i| {
            let x: Vec<f64> = sample_one(&model, &mut make_rng(cfg.seed(), i), PrecisionSpec::Standard64)?;
            let num: f64 = mixflow_log_density(&model, &x)?;
            let ex = mixflow_log_density(&model, &setup.lift(&x))?.to_f64();
            let bound = if with_bound {
                let sys = Repeated::new(setup.map.clone(), n);
                let blocks = assemble_blocks(&sys, &backward_orbit(&sys, &x, n)?)?;
                let eps = shadowing_window(lambda_min_blocktridiag(&blocks)?, cfg.delta())?;
                density_error_bound(&model, &x, eps, &LipschitzConfig::default())?.bound
            } else {
                f64::NAN
            };
            Ok::<_, shadowflow::Error>((num, ex, bound))
        });
        for (i, r) in rows.into_iter().enumerate() {
            match r {
                Ok((num, ex, bound)) => t.push(vec![
                    n.into(),
                    i.into(),
                    num.into(),
                    ex.into(),
                    (num - ex).abs().into(),
                    relative_error(num, ex).into(),
                    bound.into(),
                    "ok".into(),
                ]),
                Err(e) => {
                    let nan = Cell::Num(f64::NAN);
                    t.push(vec![
                        n.into(),
                        i.into(),
                        nan.clone(),
                        nan.clone(),
                        nan.clone(),
                        nan.clone(),
                        nan,
                        format!("failed: {e}").into(),
                    ]);
                }
            }
        }
    }
    Ok(t)
}

/// Cached-orbit MixFlow ELBO estimates averaged over seeds.
pub fn elbo_curve(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let mut t = ResultTable::new(&[
        "N",
        "mean_numerical",
        "mean_exact",
        "se_numerical",
        "se_exact",
        "mean_abs_gap",
        "failures",
    ]);
    for &n in cfg.lengths() {
        let model = setup.model(n);
        let pairs = par_map((0..cfg.seeds() as u64).collect(), |s| {
            let x = setup.reference.sample(&mut make_rng(cfg.seed(), s));
            let num: f64 = mixflow_elbo_estimate(&model, &setup.target, &x)?;
            let ex = mixflow_elbo_estimate(&model, &setup.target, &setup.lift(&x))?.to_f64();
            Ok::<_, shadowflow::Error>((num, ex))
        });
        let ok: Vec<(f64, f64)> = pairs
            .into_iter()
            .filter_map(|r| r.map_err(|e| failure_note(&e)).ok())
            .collect();
        let num: Vec<f64> = ok.iter().map(|p| p.0).collect();
        let ex: Vec<f64> = ok.iter().map(|p| p.1).collect();
        let gaps: Vec<f64> = ok.iter().map(|(a, b)| (a - b).abs()).collect();
        t.push(vec![
            n.into(),
            mean(&num).into(),
            mean(&ex).into(),
            std_error(&num).into(),
            std_error(&ex).into(),
            mean(&gaps).into(),
            (cfg.seeds() - ok.len()).into(),
        ]);
    }
    Ok(t)
}

/// `|B^N F^N z - z|` in extended precision and in binary64. The extended
/// error underflows binary64, so its base-10 logarithm is reported too.
pub fn inversion_check(cfg: &ExperimentConfig, setup: &Setup) -> Result<ResultTable, CliError> {
    let mut t = ResultTable::new(&[
        "seed",
        "N",
        "precision_bits",
        "log10_error_extended",
        "error_extended",
        "error_f64",
    ]);
    for &n in cfg.lengths() {
        let rows = par_map((0..cfg.seeds() as u64).collect(), |s| {
            let z = setup.reference.sample(&mut make_rng(cfg.seed(), s));
            let ext = round_trip_log10(&setup.map, setup.lift(&z), n)?;
            let fast = round_trip_log10(&setup.map, z, n)?;
            Ok::<_, shadowflow::Error>((ext, fast))
        });
        for (s, r) in rows.into_iter().enumerate() {
            let (ext, fast) = r.unwrap_or_else(|e| {
                failure_note(&e);
                (f64::NAN, f64::NAN)
            });
            t.push(vec![
                s.into(),
                n.into(),
                (cfg.bits() as usize).into(),
                ext.into(),
                10f64.powf(ext).into(),
                10f64.powf(fast).into(),
            ]);
        }
    }
    Ok(t)
}

/// `log10 |B^n F^n z - z|`, evaluated at the precision of `z`.
pub fn round_trip_log10<M: FlowMap, T: Real>(map: &M, z: Vec<T>, n: usize) -> shadowflow::Result<f64> {
    let mut y = z.clone();
    for _ in 0..n {
        y = map.forward(&y)?;
    }
    for _ in 0..n {
        y = map.inverse(&y)?;
    }
    let mut acc = z[0].zero_like();
    for (a, b) in y.iter().zip(&z) {
        acc += (a.clone() - b).square();
    }
    if acc.to_f64() == 0.0 && !(acc > 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((acc.ln() * 0.5).to_f64() / std::f64::consts::LN_10)
}

/// Diagnostic window of `x -> C x` against its closed form.
pub fn oracle_check(cfg: &ExperimentConfig) -> Result<ResultTable, CliError> {
    let mut t = ResultTable::new(&["C", "N", "delta", "epsilon", "closed_form", "relative_error"]);
    let scales = cfg.scaling_c.as_deref().expect("resolved");
    for &c in scales {
        for &n in cfg.lengths() {
            let sys = Repeated::new(AffineMap::scaling(1, c), n);
            let trace = forward_orbit(&sys, &[1.0], n)?;
            let r = diagnose(&sys, &trace, cfg.delta(), None)?;
            let want = scaling_map_epsilon(c, n, cfg.delta())?;
            t.push(vec![
                c.into(),
                n.into(),
                cfg.delta().into(),
                r.epsilon.into(),
                want.into(),
                relative_error(r.epsilon, want).into(),
            ]);
        }
    }
    Ok(t)
}
