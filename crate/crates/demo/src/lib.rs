//! wasm-bindgen bindings for the static page in `www/`.
//!
//! Everything runs in binary64; extended-precision references need MPFR and
//! stay in the native CLI.

use wasm_bindgen::prelude::*;

use shadowflow::dynamics::{forward_orbit, FlowMap, Repeated};
use shadowflow::estimators::{sample_one, MixFlowModel};
use shadowflow::mixflow::MixFlowMap;
use shadowflow::shadowing::{assemble_blocks, lambda_min_blocktridiag, shadowing_window, DEFAULT_DELTA};
use shadowflow::targets::{banana_target, cross_target, default_leapfrog, fit_meanfield_reference, FitConfig, Target};
use shadowflow::{make_rng, PrecisionSpec};

/// Largest flow length the page may request.
pub const MAX_LEN: usize = 1000;

type Res<T> = Result<T, String>;

fn text(e: shadowflow::Error) -> String {
    e.to_string()
}

fn check_len(n: usize) -> Res<()> {
    if n == 0 || n > MAX_LEN {
        return Err(format!("flow length must be in 1..={MAX_LEN}"));
    }
    Ok(())
}

/// A target, its MixFlow map and fitted reference.
#[wasm_bindgen]
pub struct Demo {
    map: MixFlowMap<Target>,
    model: MixFlowModel<MixFlowMap<Target>>,
    seed: u64,
}

impl Demo {
    pub fn build(target: &str, leapfrog_steps: usize, seed: u64) -> Res<Demo> {
        let t: Target = match target {
            "banana" => banana_target(0.1, 100.0).map_err(text)?.into(),
            "cross" => cross_target().into(),
            other => return Err(format!("unknown target {other:?}")),
        };
        let (steps, eps) = default_leapfrog(target).expect("built-in target");
        let steps = if leapfrog_steps == 0 { steps } else { leapfrog_steps };
        let map = MixFlowMap::with_defaults(t.clone(), steps, eps).map_err(text)?;
        let fit = FitConfig {
            steps: 2000,
            ..FitConfig::default()
        };
        let reference = fit_meanfield_reference(&t, &fit, &mut make_rng(seed, u64::MAX))
            .map_err(text)?
            .augmented();
        let model = MixFlowModel::new(map.clone(), reference, 0).map_err(text)?;
        Ok(Demo { map, model, seed })
    }

    fn origin(&self, stream: u64) -> Vec<f64> {
        self.model.reference.sample(&mut make_rng(self.seed, stream))
    }

    pub fn window_curve_rs(&self, max_len: usize, stream: u64) -> Res<Vec<f64>> {
        check_len(max_len)?;
        let sys = Repeated::new(self.map.clone(), max_len);
        let trace = forward_orbit(&sys, &self.origin(stream), max_len).map_err(text)?;
        let blocks = assemble_blocks(&sys, &trace).map_err(text)?;
        let mut out = Vec::with_capacity(2 * max_len);
        for n in 1..=max_len {
            let lm = lambda_min_blocktridiag(&blocks.prefix(n).map_err(text)?).map_err(text)?;
            out.push(n as f64);
            out.push(shadowing_window(lm, DEFAULT_DELTA).map_err(text)?);
        }
        Ok(out)
    }

    pub fn round_trip_errors_rs(&self, max_len: usize, stream: u64) -> Res<Vec<f64>> {
        check_len(max_len)?;
        let z = self.origin(stream);
        let mut fwd = vec![z.clone()];
        for _ in 0..max_len {
            let next = self.map.forward(fwd.last().expect("nonempty")).map_err(text)?;
            fwd.push(next);
        }
        let mut out = Vec::with_capacity(max_len);
        for n in 1..=max_len {
            let mut y = fwd[n].clone();
            for _ in 0..n {
                y = self.map.inverse(&y).map_err(text)?;
            }
            out.push(y.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
        }
        Ok(out)
    }

    pub fn samples_rs(&self, len: usize, count: usize) -> Res<Vec<f64>> {
        check_len(len)?;
        let model = self.model.with_len(len);
        let mut out = Vec::with_capacity(2 * count);
        for i in 0..count as u64 {
            let z: Vec<f64> =
                sample_one(&model, &mut make_rng(self.seed, i), PrecisionSpec::Standard64).map_err(text)?;
            out.extend_from_slice(&z[..2]);
        }
        Ok(out)
    }
}

fn to_js<T>(r: Res<T>) -> Result<T, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
impl Demo {
    /// `target` is "banana" or "cross"; `leapfrog_steps` 0 keeps the default.
    #[wasm_bindgen(constructor)]
    pub fn new(target: &str, leapfrog_steps: usize, seed: u32) -> Result<Demo, JsError> {
        to_js(Demo::build(target, leapfrog_steps, seed as u64))
    }

    /// Shadowing window along one forward orbit, as `[N, eps, N, eps, ...]`
    /// for N = 1..=max_len.
    pub fn window_curve(&self, max_len: usize, stream: u32) -> Result<Vec<f64>, JsError> {
        to_js(self.window_curve_rs(max_len, stream as u64))
    }

    /// `|B^n F^n z - z|` for n = 1..=max_len, all in binary64.
    pub fn round_trip_errors(&self, max_len: usize, stream: u32) -> Result<Vec<f64>, JsError> {
        to_js(self.round_trip_errors_rs(max_len, stream as u64))
    }

    /// Positions of `count` MixFlow draws with flow length `len`, as
    /// `[x1, y1, x2, y2, ...]`.
    pub fn samples(&self, len: usize, count: usize) -> Result<Vec<f64>, JsError> {
        to_js(self.samples_rs(len, count))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operations_have_expected_shapes() {
        let d = Demo::build("cross", 10, 3).unwrap();
        let w = d.window_curve_rs(5, 0).unwrap();
        assert_eq!(w.len(), 10);
        assert!(w.chunks(2).all(|p| p[1] > 0.0));
        assert!(w.chunks(2).zip(w.chunks(2).skip(1)).all(|(a, b)| b[1] >= a[1]));
        let r = d.round_trip_errors_rs(4, 0).unwrap();
        assert_eq!(r.len(), 4);
        assert!(r[0] < 1e-10);
        assert_eq!(d.samples_rs(3, 7).unwrap().len(), 14);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Demo::build("gaussian", 0, 1).is_err());
        let d = Demo::build("banana", 5, 1).unwrap();
        assert!(d.samples_rs(0, 3).is_err());
        assert!(d.window_curve_rs(MAX_LEN + 1, 0).is_err());
    }
}
