//! Small dense complex linear algebra on top of `nalgebra`.
//!
//! All matrices here are tiny (at most a few dozen entries), so the helpers
//! favour clarity over avoiding allocations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative tolerance used to decide that a singular value is zero.
pub const RANK_TOL: f64 = 1e-9;

/// Singular values in decreasing order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    let svd = a.clone().svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Numerical rank with a tolerance relative to the largest singular value.
pub fn rank(a: &CMat) -> usize {
    let s = singular_values(a);
    match s.first() {
        None => 0,
        Some(&top) if top <= f64::MIN_POSITIVE => 0,
        Some(&top) => s.iter().filter(|&&v| v > RANK_TOL * top).count(),
    }
}

/// Rotates the phase of `v` so that its largest-magnitude entry is real and
/// positive. Makes singular vectors deterministic.
pub fn fix_phase(v: &mut CVec) {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in v.iter().enumerate() {
        let m = z.norm();
        if m > best_mag + 1e-12 {
            best_mag = m;
            best = i;
        }
    }
    if best_mag <= 0.0 {
        return;
    }
    let rot = v[best].conj() / best_mag;
    for z in v.iter_mut() {
        *z *= rot;
    }
}

fn fix_columns(m: &mut CMat) {
    for j in 0..m.ncols() {
        let mut c: CVec = m.column(j).into_owned();
        fix_phase(&mut c);
        m.set_column(j, &c);
    }
}

/// Orthonormal basis (as columns) of the null space of `a`.
///
/// Wide matrices are padded with zero rows so the decomposition returns the
/// full set of right singular vectors.
pub fn null_space(a: &CMat) -> CMat {
    let (r, c) = a.shape();
    if c == 0 {
        return CMat::zeros(0, 0);
    }
    if r == 0 {
        return CMat::identity(c, c);
    }
    let padded = if r < c {
        let mut p = CMat::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let s = &svd.singular_values;
    let top = s.iter().copied().fold(0.0, f64::max);
    let cutoff = RANK_TOL * top.max(f64::MIN_POSITIVE);
    let idx: Vec<usize> = (0..s.len()).filter(|&i| s[i] <= cutoff).collect();
    let mut basis = CMat::zeros(c, idx.len());
    for (j, &i) in idx.iter().enumerate() {
        let row = v_t.row(i);
        for l in 0..c {
            basis[(l, j)] = row[l].conj();
        }
    }
    fix_columns(&mut basis);
    basis
}

/// The `count` dominant right singular vectors of `a` as columns, in
/// decreasing order of singular value.
pub fn dominant_right_singular_vectors(a: &CMat, count: usize) -> CMat {
    let c = a.ncols();
    if count == 0 {
        return CMat::zeros(c, 0);
    }
    let (r, _) = a.shape();
    let padded = if r < c {
        let mut p = CMat::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    assert!(
        count <= v_t.nrows(),
        "asked for more singular vectors than exist"
    );
    let mut out = CMat::zeros(c, count);
    for j in 0..count {
        for l in 0..c {
            out[(l, j)] = v_t[(j, l)].conj();
        }
    }
    fix_columns(&mut out);
    out
}

/// Component of `v` orthogonal to the span of `span`, or `None` when the
/// span is the whole space. Modified Gram–Schmidt, applied twice for
/// stability; directions below `RANK_TOL` of the largest vector are dropped.
pub fn project_out(v: &CVec, span: &[&CVec]) -> Option<CVec> {
    let n = v.len();
    let scale = span.iter().map(|u| u.norm()).fold(0.0, f64::max);
    let mut basis: Vec<CVec> = Vec::with_capacity(n);
    for u in span {
        let mut w = (*u).clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w.axpy(-c, q, Complex64::new(1.0, 0.0));
            }
        }
        let norm = w.norm();
        if norm > RANK_TOL * scale {
            basis.push(w.unscale(norm));
            if basis.len() == n {
                return None;
            }
        }
    }
    let mut w = v.clone();
    for _ in 0..2 {
        for q in &basis {
            let c = q.dotc(&w);
            w.axpy(-c, q, Complex64::new(1.0, 0.0));
        }
    }
    Some(w)
}

/// Stacks matrices with equal column counts vertically.
pub fn vstack(blocks: &[&CMat]) -> CMat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Concatenates matrices with equal row counts horizontally.
pub fn hstack(rows: usize, blocks: &[&CMat]) -> CMat {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// `|u^H v|^2`
pub fn inner_sq(u: &CVec, v: &CVec) -> f64 {
    u.dotc(v).norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = CMat::from_row_slice(
            2,
            4,
            &[
                c(1.0, 0.5),
                c(-0.3, 0.2),
                c(0.7, -1.1),
                c(0.0, 0.4),
                c(0.2, 0.0),
                c(1.3, 0.9),
                c(-0.4, 0.6),
                c(0.8, -0.2),
            ],
        );
        let n = null_space(&a);
        assert_eq!(n.shape(), (4, 2));
        assert!((&a * &n).norm() < 1e-12);
        let gram = n.adjoint() * &n;
        assert!((gram - CMat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_full_rank_square_is_empty() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.5, 0.1), c(0.0, -1.0), c(2.0, 0.0)]);
        assert_eq!(null_space(&a).ncols(), 0);
    }

    #[test]
    fn dominant_vector_is_phase_fixed() {
        let a = CMat::from_row_slice(
            2,
            3,
            &[
                c(3.0, 1.0),
                c(0.0, 0.0),
                c(0.1, 0.0),
                c(0.0, 0.0),
                c(1.0, 0.0),
                c(0.0, 0.2),
            ],
        );
        let v = dominant_right_singular_vectors(&a, 2);
        for j in 0..2 {
            let col = v.column(j);
            let (imax, _) = col
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
                .unwrap();
            assert!(col[imax].im.abs() < 1e-12 && col[imax].re > 0.0);
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_detects_deficiency() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 1.0), c(2.0, 2.0), c(0.5, 0.5), c(1.0, 1.0)]);
        assert_eq!(rank(&a), 1);
    }

    fn vectors(n: usize, count: usize) -> impl proptest::strategy::Strategy<Value = Vec<CVec>> {
        use proptest::prelude::*;
        prop::collection::vec(
            prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n),
            count,
        )
        .prop_map(move |vs| {
            vs.into_iter()
                .map(|v| CVec::from_iterator(n, v.into_iter().map(|(re, im)| c(re, im))))
                .collect()
        })
    }

    proptest::proptest! {
        #[test]
        fn projection_matches_null_space(vs in vectors(4, 3)) {
            let (v, span) = (&vs[0], [&vs[1], &vs[2]]);
            let cols: Vec<CMat> = span.iter().map(|u| CMat::from_column_slice(4, 1, u.as_slice())).collect();
            let refs: Vec<&CMat> = cols.iter().collect();
            let basis = null_space(&hstack(4, &refs).adjoint());
            let expected = &basis * (basis.adjoint() * v);
            let got = project_out(v, &span).unwrap();
            proptest::prop_assert!((got - expected).norm() < 1e-10);
        }
    }

    #[test]
    fn projection_onto_full_span_is_none() {
        let e = |i: usize| CVec::from_fn(2, |j, _| c(if i == j { 1.0 } else { 0.0 }, 0.0));
        let (a, b) = (e(0), e(1));
        assert!(project_out(&CVec::from_element(2, c(1.0, 1.0)), &[&a, &b, &a]).is_none());
        let proj = project_out(&CVec::from_element(2, c(1.0, 1.0)), &[&a, &a]).unwrap();
        assert!((proj - CVec::from_vec(vec![c(0.0, 0.0), c(1.0, 1.0)])).norm() < 1e-15);
    }
}
