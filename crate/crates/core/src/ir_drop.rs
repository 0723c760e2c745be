// SPDX-License-Identifier: Apache-2.0
//! Steady-state currents of a crossbar with resistive wires.
//!
//! Two-wire model: every cross-point device `(i, j)` connects wordline node
//! `(i, j)` to bitline node `(i, j)`. Wordline `i` is driven at column 0
//! through one wire segment; the last column is open. Bitline `j` is sensed
//! at virtual ground below the last row through one wire segment; the first
//! row is open. Adjacent nodes are joined by `wire_resistance`.
//!
//! [`IrDropSolver`] solves the nodal equations by block Gauss-Seidel: given
//! the bitline voltages every wordline is an exact tridiagonal solve, and
//! vice versa. The tridiagonal factors depend only on the conductances and
//! are computed once, so many input vectors can share them.
//! [`dense_ir_drop_currents`] assembles the full nodal matrix and solves it
//! directly; it is the reference for small arrays.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, AimcError, Result};
use crate::matrix::Matrix;

/// µS → S
const SIEMENS_PER_MICRO: f64 = 1e-6;
/// A → µA
const MICRO_PER_AMP: f64 = 1e6;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 20_000;
/// Largest array accepted by the dense reference solver (rows · cols).
pub const DENSE_MAX_CELLS: usize = 32 * 32;

/// Right-hand sides solved together; innermost dimension of the work arrays.
const CHUNK: usize = 4;

/// Factorized crossbar, reusable across input vectors.
#[derive(Debug, Clone)]
pub struct IrDropSolver {
    rows: usize,
    cols: usize,
    r: f64,
    /// `R · g` in siemens·ohm, row-major.
    rg: Vec<f64>,
    g: Matrix,
    // Thomas factors, row-major (row, col) for both line families.
    wl_c: Vec<f64>,
    wl_inv: Vec<f64>,
    bl_c: Vec<f64>,
    bl_inv: Vec<f64>,
    tolerance: f64,
    max_sweeps: usize,
}

/// Thomas factors for `diag_k x_k − x_{k−1} − x_{k+1} = d_k`.
fn factor_line(diag: impl Iterator<Item = f64>, c: &mut [f64], inv: &mut [f64]) {
    let mut prev_c = 0.0;
    for (k, b) in diag.enumerate() {
        let piv = 1.0 / (b + prev_c);
        inv[k] = piv;
        c[k] = -piv;
        prev_c = c[k];
    }
}

impl IrDropSolver {
    /// `g` in µS, `wire_resistance` in Ω (must be > 0; use the ideal product for 0).
    pub fn new(g: &Matrix, wire_resistance: f64) -> Result<Self> {
        if !(wire_resistance > 0.0) || !wire_resistance.is_finite() {
            return Err(AimcError::InvalidConfig(format!(
                "iterative IR-drop solve needs wire_resistance > 0, got {wire_resistance}"
            )));
        }
        let (m, n) = g.shape();
        if m == 0 || n == 0 {
            return Err(shape_err("empty conductance grid"));
        }
        if g.as_slice().iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(AimcError::MappingDomain(
                "conductances must be finite and non-negative".into(),
            ));
        }
        let rg: Vec<f64> = g
            .as_slice()
            .iter()
            .map(|&v| wire_resistance * v * SIEMENS_PER_MICRO)
            .collect();

        let mut wl_c = vec![0.0; m * n];
        let mut wl_inv = vec![0.0; m * n];
        for i in 0..m {
            let row = &rg[i * n..(i + 1) * n];
            // two segments per node except the open far end
            let diag = (0..n).map(|j| if j + 1 < n { 2.0 } else { 1.0 } + row[j]);
            factor_line(
                diag,
                &mut wl_c[i * n..(i + 1) * n],
                &mut wl_inv[i * n..(i + 1) * n],
            );
        }
        let mut bl_c = vec![0.0; m * n];
        let mut bl_inv = vec![0.0; m * n];
        let (mut c_line, mut inv_line) = (vec![0.0; m], vec![0.0; m]);
        for j in 0..n {
            // segment below every node (last one to ground), above all but the first
            let diag = (0..m).map(|i| if i > 0 { 2.0 } else { 1.0 } + rg[i * n + j]);
            factor_line(diag, &mut c_line, &mut inv_line);
            for i in 0..m {
                bl_c[i * n + j] = c_line[i];
                bl_inv[i * n + j] = inv_line[i];
            }
        }

        Ok(Self {
            rows: m,
            cols: n,
            r: wire_resistance,
            rg,
            g: g.clone(),
            wl_c,
            wl_inv,
            bl_c,
            bl_inv,
            tolerance: DEFAULT_TOLERANCE,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_sweeps(mut self, max_sweeps: usize) -> Self {
        self.max_sweeps = max_sweeps;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Column currents (µA) for one vector of wordline voltages (V).
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        let vs = Matrix::from_vec(1, v.len(), v.to_vec())?;
        Ok(self.solve_batch(&vs)?.into_vec())
    }

    /// Column currents for each row of `voltages` (batch × rows).
    ///
    /// Large batches go through the transfer matrix, since the network is
    /// linear in the drive voltages.
    pub fn solve_batch(&self, voltages: &Matrix) -> Result<Matrix> {
        if voltages.cols() != self.rows {
            return Err(shape_err(format!(
                "{} drive voltages for {} wordlines",
                voltages.cols(),
                self.rows
            )));
        }
        if voltages.rows() > self.rows {
            let transfer = self.transfer_matrix()?;
            let mut out = Matrix::zeros(voltages.rows(), self.cols);
            for b in 0..voltages.rows() {
                transfer.vec_mul_into(voltages.row(b), out.row_mut(b));
            }
            return Ok(out);
        }
        self.solve_direct(voltages)
    }

    /// `A` with `currents = voltagesᵀ A`; row `i` holds the response to a unit drive on wordline `i`.
    pub fn transfer_matrix(&self) -> Result<Matrix> {
        let eye = Matrix::from_fn(self.rows, self.rows, |i, j| if i == j { 1.0 } else { 0.0 });
        self.solve_direct(&eye)
    }

    fn solve_direct(&self, voltages: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(voltages.rows(), self.cols);
        let mut work = Work::new(self.rows, self.cols);
        let mut start = 0;
        while start < voltages.rows() {
            let k = CHUNK.min(voltages.rows() - start);
            self.solve_chunk(voltages, start, k, &mut work, &mut out)?;
            start += k;
        }
        Ok(out)
    }

    fn solve_chunk(
        &self,
        voltages: &Matrix,
        start: usize,
        k: usize,
        work: &mut Work,
        out: &mut Matrix,
    ) -> Result<()> {
        let (m, n) = (self.rows, self.cols);
        let Work { u, b, f } = work;
        b.iter_mut().for_each(|x| *x = [0.0; CHUNK]);

        let mut drive = vec![[0.0f64; CHUNK]; m];
        for (i, d) in drive.iter_mut().enumerate() {
            for (r, dr) in d.iter_mut().enumerate().take(k) {
                *dr = voltages.get(start + r, i);
            }
        }
        let active: Vec<bool> = (0..k).map(|r| drive.iter().any(|d| d[r] != 0.0)).collect();
        if !active.iter().any(|&a| a) {
            return Ok(());
        }

        for sweep in 0..self.max_sweeps {
            // Per row: tridiagonal wordline solve given the bitline voltages,
            // then that row's step of the forward elimination of every bitline.
            for i in 0..m {
                let row = i * n..(i + 1) * n;
                let (rg, wl_inv, wl_c) = (
                    &self.rg[row.clone()],
                    &self.wl_inv[row.clone()],
                    &self.wl_c[row.clone()],
                );
                let b_row = &b[row.clone()];
                let mut prev = drive[i];
                for j in 0..n {
                    let (g, inv, bj) = (rg[j], wl_inv[j], &b_row[j]);
                    let mut d = [0.0; CHUNK];
                    for r in 0..CHUNK {
                        d[r] = (g * bj[r] + prev[r]) * inv;
                    }
                    u[j] = d;
                    prev = d;
                }
                for j in (0..n - 1).rev() {
                    let c = wl_c[j];
                    let next = u[j + 1];
                    for (x, y) in u[j].iter_mut().zip(next) {
                        *x -= c * y;
                    }
                }

                let bl_inv = &self.bl_inv[row.clone()];
                let (done, rest) = f.split_at_mut(i * n);
                let f_row = &mut rest[..n];
                let above = if i > 0 {
                    Some(&done[(i - 1) * n..])
                } else {
                    None
                };
                for j in 0..n {
                    let (g, inv) = (rg[j], bl_inv[j]);
                    let a = above.map_or([0.0; CHUNK], |a| a[j]);
                    let uj = &u[j];
                    let fj = &mut f_row[j];
                    for r in 0..CHUNK {
                        fj[r] = (g * uj[r] + a[r]) * inv;
                    }
                }
            }

            // bitline back substitution
            let mut delta = [0.0f64; CHUNK];
            let mut norm = [0.0f64; CHUNK];
            for i in (0..m).rev() {
                let row = i * n..(i + 1) * n;
                let (rg, bl_c) = (&self.rg[row.clone()], &self.bl_c[row.clone()]);
                let (cur, below) = b.split_at_mut((i + 1) * n);
                let b_row = &mut cur[i * n..];
                let f_row = &f[row];
                for j in 0..n {
                    let (g, c) = (rg[j], bl_c[j]);
                    let under = if i + 1 < m { below[j] } else { [0.0; CHUNK] };
                    let (bj, fj) = (&mut b_row[j], &f_row[j]);
                    for r in 0..CHUNK {
                        let new = fj[r] - c * under[r];
                        let dv = g * (new - bj[r]);
                        delta[r] += dv * dv;
                        norm[r] += (g * new) * (g * new);
                        bj[r] = new;
                    }
                }
            }

            let converged =
                (0..k).all(|r| !active[r] || delta[r] <= self.tolerance * self.tolerance * norm[r]);
            if converged && sweep > 0 {
                let last = &b[(m - 1) * n..];
                for r in 0..k {
                    for (o, bj) in out.row_mut(start + r).iter_mut().zip(last) {
                        *o = bj[r] / self.r * MICRO_PER_AMP;
                    }
                }
                return Ok(());
            }
            if delta.iter().chain(&norm).any(|x| !x.is_finite()) {
                break;
            }
        }
        Err(AimcError::Numerical(format!(
            "IR-drop relaxation did not reach relative residual {} within {} sweeps",
            self.tolerance, self.max_sweeps
        )))
    }

    /// Ideal (wire-free) currents for comparison.
    pub fn ideal_currents(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.g.vec_mul_into(v, &mut out);
        out
    }
}

struct Work {
    /// one wordline
    u: Vec<[f64; CHUNK]>,
    b: Vec<[f64; CHUNK]>,
    f: Vec<[f64; CHUNK]>,
}

impl Work {
    fn new(m: usize, n: usize) -> Self {
        Self {
            u: vec![[0.0; CHUNK]; n],
            b: vec![[0.0; CHUNK]; m * n],
            f: vec![[0.0; CHUNK]; m * n],
        }
    }
}

/// Column currents (µA) of a crossbar with conductances `g` (µS) driven by
/// wordline voltages `v_in` (V). With zero wire resistance this is `v_inᵀ g`.
pub fn ir_drop_currents(g: &Matrix, v_in: &[f64], wire_resistance: f64) -> Result<Vec<f64>> {
    if v_in.len() != g.rows() {
        return Err(shape_err(format!(
            "{} drive voltages for {} wordlines",
            v_in.len(),
            g.rows()
        )));
    }
    if !(wire_resistance >= 0.0) {
        return Err(AimcError::InvalidConfig(
            "wire_resistance must be >= 0".into(),
        ));
    }
    if wire_resistance == 0.0 {
        let mut out = vec![0.0; g.cols()];
        g.vec_mul_into(v_in, &mut out);
        return Ok(out);
    }
    IrDropSolver::new(g, wire_resistance)?.solve(v_in)
}

/// Direct LU solve of the full nodal system; reference for arrays up to
/// [`DENSE_MAX_CELLS`] cells.
pub fn dense_ir_drop_currents(g: &Matrix, v_in: &[f64], wire_resistance: f64) -> Result<Vec<f64>> {
    let (m, n) = g.shape();
    if v_in.len() != m {
        return Err(shape_err("drive voltage count differs from wordline count"));
    }
    if m * n > DENSE_MAX_CELLS {
        return Err(AimcError::InvalidConfig(format!(
            "dense nodal solve limited to {DENSE_MAX_CELLS} cells, got {m}x{n}"
        )));
    }
    if wire_resistance == 0.0 {
        let mut out = vec![0.0; n];
        g.vec_mul_into(v_in, &mut out);
        return Ok(out);
    }
    let gw = 1.0 / wire_resistance;
    let size = 2 * m * n;
    let wl = |i: usize, j: usize| i * n + j;
    let bl = |i: usize, j: usize| m * n + i * n + j;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    let link = |a: &mut DMatrix<f64>, p: usize, q: usize, c: f64| {
        a[(p, p)] += c;
        a[(q, q)] += c;
        a[(p, q)] -= c;
        a[(q, p)] -= c;
    };
    for i in 0..m {
        // driver segment into the first wordline node
        a[(wl(i, 0), wl(i, 0))] += gw;
        rhs[wl(i, 0)] += gw * v_in[i];
        for j in 0..n {
            if j + 1 < n {
                link(&mut a, wl(i, j), wl(i, j + 1), gw);
            }
            if i + 1 < m {
                link(&mut a, bl(i, j), bl(i + 1, j), gw);
            }
            link(&mut a, wl(i, j), bl(i, j), g.get(i, j) * SIEMENS_PER_MICRO);
        }
    }
    for j in 0..n {
        // sense segment to virtual ground
        a[(bl(m - 1, j), bl(m - 1, j))] += gw;
    }
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| AimcError::Numerical("singular nodal matrix".into()))?;
    Ok((0..n)
        .map(|j| x[bl(m - 1, j)] * gw * MICRO_PER_AMP)
        .collect())
}
