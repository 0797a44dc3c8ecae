use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::representation::FeatureVector;

/// Mean squared gap between two empirical characteristic functions over a
/// set of frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct CfDiscrepancy {
    pub value: f64,
    pub per_frequency: Vec<f64>,
}

/// Weights divided by their maximum. Equal weights become exactly 1.
pub(crate) fn relative_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::contract("weights must be finite and nonnegative"));
    }
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::contract("weights are all zero"));
    }
    Ok(weights.iter().map(|w| w / max).collect())
}

fn phase(t: ArrayView1<f64>, h: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for (a, b) in t.iter().zip(h.iter()) {
        acc += a * b;
    }
    acc
}

fn weighted_cf(points: ArrayView2<f64>, rel: Option<&[f64]>, t: ArrayView1<f64>) -> (f64, f64) {
    let (mut re, mut im, mut total) = (0.0, 0.0, 0.0);
    for (i, h) in points.outer_iter().enumerate() {
        let w = rel.map_or(1.0, |r| r[i]);
        let p = phase(t, h);
        re += w * p.cos();
        im += w * p.sin();
        total += w;
    }
    (re / total, im / total)
}

fn check_shapes(real: &Array2<f64>, n_weights: usize, syn: &Array2<f64>, freqs: &Array2<f64>) -> Result<()> {
    if real.nrows() == 0 || syn.nrows() == 0 || freqs.nrows() == 0 {
        return Err(Error::contract("real, synthetic and frequency sets must be nonempty"));
    }
    if n_weights != real.nrows() {
        return Err(Error::contract(format!("{n_weights} weights for {} real features", real.nrows())));
    }
    if real.ncols() != syn.ncols() || real.ncols() != freqs.ncols() {
        return Err(Error::contract("feature and frequency dimensions differ"));
    }
    Ok(())
}

/// Discrepancy between the weighted real CF and the uniform synthetic CF;
/// features and frequencies are rows.
pub fn cf_discrepancy_matrix(real: &Array2<f64>, weights: &[f64], syn: &Array2<f64>, freqs: &Array2<f64>) -> Result<CfDiscrepancy> {
    check_shapes(real, weights.len(), syn, freqs)?;
    let rel = relative_weights(weights)?;
    let per_frequency: Vec<f64> = (0..freqs.nrows())
        .into_par_iter()
        .map(|k| {
            let t = freqs.row(k);
            let (rr, ri) = weighted_cf(real.view(), Some(&rel), t);
            let (sr, si) = weighted_cf(syn.view(), None, t);
            (rr - sr).powi(2) + (ri - si).powi(2)
        })
        .collect();
    let mut total = 0.0;
    for c in &per_frequency {
        total += c;
    }
    Ok(CfDiscrepancy {
        value: total / per_frequency.len() as f64,
        per_frequency,
    })
}

pub fn features_to_matrix(feats: &[FeatureVector]) -> Result<Array2<f64>> {
    let d = feats.first().map_or(0, |f| f.dim());
    if feats.iter().any(|f| f.dim() != d) {
        return Err(Error::contract("feature vectors differ in length"));
    }
    Ok(Array2::from_shape_fn((feats.len(), d), |(i, j)| feats[i].0[j]))
}

pub fn cf_discrepancy(real: &[FeatureVector], weights: &[f64], syn: &[FeatureVector], freqs: &Array2<f64>) -> Result<CfDiscrepancy> {
    cf_discrepancy_matrix(&features_to_matrix(real)?, weights, &features_to_matrix(syn)?, freqs)
}

/// Records the discrepancy on a tape. `weights` must already be normalized
/// to sum to one.
pub fn record_cf_discrepancy(tape: &mut Tape, real: Var, weights: &[f64], syn: Var, freqs: Var) -> Var {
    let m = tape.shape(syn).0 as f64;
    let k = tape.shape(freqs).0 as f64;
    let ft = tape.transpose(freqs);
    let w = tape.constant(Array2::from_shape_vec((1, weights.len()), weights.to_vec()).unwrap());

    let pr = tape.matmul(real, ft);
    let cr = tape.cos(pr);
    let sr = tape.sin(pr);
    let cr = tape.matmul(w, cr);
    let sr = tape.matmul(w, sr);

    let ps = tape.matmul(syn, ft);
    let cs = tape.cos(ps);
    let ss = tape.sin(ps);
    let cs = tape.sum_rows(cs);
    let cs = tape.scale(cs, 1.0 / m);
    let ss = tape.sum_rows(ss);
    let ss = tape.scale(ss, 1.0 / m);

    let dc = tape.sub(cr, cs);
    let ds = tape.sub(sr, ss);
    let a = tape.sum_squares(dc);
    let b = tape.sum_squares(ds);
    let total = tape.add(a, b);
    tape.scale(total, 1.0 / k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_frequency_closed_form() {
        let h = array![[0.3, -0.2]];
        let delta = array![0.05, 0.4];
        let syn = &h + &delta.clone().insert_axis(ndarray::Axis(0));
        let t = array![[1.7, -0.6]];
        let d = cf_discrepancy_matrix(&h, &[1.0], &syn, &t).unwrap();
        let td = 1.7 * 0.05 - 0.6 * 0.4;
        assert!((d.value - (2.0 - 2.0 * f64::cos(td))).abs() < 1e-12);
    }

    #[test]
    fn identical_sets_and_zero_frequency() {
        let x = array![[0.1, 0.2], [0.5, -1.0], [2.0, 0.0]];
        let freqs = array![[1.0, 2.0], [-0.5, 0.3], [0.0, 0.0]];
        let d = cf_discrepancy_matrix(&x, &[1.0, 1.0, 1.0], &x, &freqs).unwrap();
        assert!(d.value.abs() < 1e-12);
        let other = array![[9.0, 9.0]];
        let zero = array![[0.0, 0.0]];
        assert_eq!(cf_discrepancy_matrix(&x, &[0.2, 0.5, 0.3], &other, &zero).unwrap().value, 0.0);
        assert!(cf_discrepancy_matrix(&x, &[0.0, 0.0, 0.0], &x, &freqs).is_err());
        assert!(cf_discrepancy_matrix(&x, &[1.0, -1.0, 1.0], &x, &freqs).is_err());
    }

    #[test]
    fn tape_matches_direct() {
        let real = array![[0.1, 0.2], [0.5, -1.0], [2.0, 0.0]];
        let w = [0.2, 0.5, 0.3];
        let syn = array![[0.0, 0.1], [1.0, 1.0]];
        let freqs = array![[1.0, 2.0], [-0.5, 0.3]];
        let direct = cf_discrepancy_matrix(&real, &w, &syn, &freqs).unwrap().value;
        let mut tape = Tape::new();
        let r = tape.constant(real);
        let s = tape.constant(syn);
        let f = tape.constant(freqs);
        let v = record_cf_discrepancy(&mut tape, r, &w, s, f);
        assert!((tape.scalar(v) - direct).abs() < 1e-14);
    }
}
