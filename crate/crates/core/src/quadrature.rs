//! Globally adaptive 21-point Gauss-Kronrod quadrature, plus a variant over
//! the whole real line through the substitution `u = center + scale * tan(v)`.
//!
//! The partition that meets the tolerance is returned with the result so
//! that further integrals (posterior moments, gradients) can be taken on
//! exactly the same nodes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            max_intervals: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadratureResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Final partition, sorted by left endpoint.
    pub intervals: Vec<(f64, f64)>,
    /// Integrand values at the Kronrod nodes of each interval, in
    /// [`kronrod_nodes`] order.
    pub values: Vec<[f64; 21]>,
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut err = err.abs();
    if res_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / res_asc).powf(1.5);
        err = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    err
}

/// One 21-point rule on `[a, b]`: (kronrod estimate, error estimate, values).
fn qk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, [f64; 21]) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_g = 0.0;
    let mut res_k = WGK[10] * fc;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let err = rescale_error((res_k - res_g) * half, res_abs * half.abs(), res_asc * half.abs());
    let mut values = [fc; 21];
    for j in 0..10 {
        values[2 * j] = fv1[j];
        values[2 * j + 1] = fv2[j];
    }
    (res_k * half, err, values)
}

/// Kronrod nodes and weights on `[a, b]`.
pub fn kronrod_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..21).map(move |k| {
        if k == 20 {
            (center, WGK[10] * half)
        } else {
            let j = k / 2;
            let x = if k % 2 == 0 { -half * XGK[j] } else { half * XGK[j] };
            (center + x, WGK[j] * half)
        }
    })
}

/// Integrate `f` over `[a, b]`, bisecting the interval with the largest
/// error estimate until the total error is within tolerance.
pub fn adaptive_gauss_kronrod<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    opts: &QuadratureOptions,
) -> QuadratureResult {
    adaptive_from_breaks(f, &[a, b], opts)
}

/// As [`adaptive_gauss_kronrod`], starting from the partition given by the
/// increasing `breaks`.
pub fn adaptive_from_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    opts: &QuadratureOptions,
) -> QuadratureResult {
    let mut parts: Vec<(f64, f64, f64, f64, [f64; 21])> = breaks
        .windows(2)
        .map(|w| {
            let (v, e, fx) = qk21(&mut f, w[0], w[1]);
            (w[0], w[1], v, e, fx)
        })
        .collect();
    let mut evaluations = 21 * parts.len();
    let mut converged = false;
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if !total.is_finite() || !err.is_finite() {
            break;
        }
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            converged = true;
            break;
        }
        if parts.len() >= opts.max_intervals {
            break;
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            // interval cannot be split further in floating point
            break;
        }
        let (v1, e1, f1) = qk21(&mut f, lo, mid);
        let (v2, e2, f2) = qk21(&mut f, mid, hi);
        evaluations += 42;
        parts.push((lo, mid, v1, e1, f1));
        parts.push((mid, hi, v2, e2, f2));
    }
    parts.sort_by(|x, y| x.0.total_cmp(&y.0));
    QuadratureResult {
        value: parts.iter().map(|p| p.2).sum(),
        abs_error: parts.iter().map(|p| p.3).sum(),
        evaluations,
        converged,
        intervals: parts.iter().map(|p| (p.0, p.1)).collect(),
        values: parts.iter().map(|p| p.4).collect(),
    }
}

/// Integration over the real line via `u = center + scale * tan(v)`.
#[derive(Debug, Clone)]
pub struct RealLineRule {
    pub center: f64,
    pub scale: f64,
    pub result: QuadratureResult,
}

impl RealLineRule {
    #[inline]
    fn map(center: f64, scale: f64, v: f64) -> (f64, f64) {
        let (s, c) = v.sin_cos();
        (center + scale * s / c, scale / (c * c))
    }

    /// Nodes `u_k` and weights `w_k` (Jacobian included) of the final
    /// partition, so that `sum w_k f(u_k)` reproduces `result.value`.
    pub fn nodes(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(21 * self.result.intervals.len());
        for &(a, b) in &self.result.intervals {
            for (v, w) in kronrod_nodes(a, b) {
                let (u, jac) = Self::map(self.center, self.scale, v);
                out.push((u, w * jac));
            }
        }
        out
    }

    /// Nodes `u_k` with the normalised weights `w_k f(u_k) / result.value`
    /// of the integrand that produced the rule.
    pub fn posterior_nodes(&self) -> Vec<(f64, f64)> {
        let total = self.result.value;
        let mut out = Vec::with_capacity(21 * self.result.intervals.len());
        for (&(a, b), fx) in self.result.intervals.iter().zip(&self.result.values) {
            for ((v, w), y) in kronrod_nodes(a, b).zip(fx) {
                let (u, _) = Self::map(self.center, self.scale, v);
                out.push((u, w * y / total));
            }
        }
        out
    }
}

/// `int_R f(u) du`, with `f` expected to be concentrated around `center`
/// on a length scale of about `scale`.
pub fn integrate_real_line<F: FnMut(f64) -> f64>(
    mut f: F,
    center: f64,
    scale: f64,
    opts: &QuadratureOptions,
) -> RealLineRule {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let b1 = 1.5f64.atan();
    let b2 = 4.0f64.atan();
    let result = adaptive_from_breaks(
        |v| {
            let (u, jac) = RealLineRule::map(center, scale, v);
            if !u.is_finite() {
                return 0.0;
            }
            let y = f(u) * jac;
            if y.is_finite() {
                y
            } else {
                0.0
            }
        },
        &[-half_pi, -b2, -b1, b1, b2, half_pi],
        opts,
    );
    RealLineRule {
        center,
        scale,
        result,
    }
}
