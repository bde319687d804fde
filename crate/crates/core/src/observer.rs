//! Per-node reduced-order estimator on the quotient space.

use thiserror::Error;

use crate::geometry::ObserverDesign;
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("{what} has length {found}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },
}

/// Quotient estimate `s_i` driven by local outputs and known inputs:
///
/// `s(t+1) = Abar s(t) - P L y(t) + P B_i u(t)`.
#[derive(Debug, Clone)]
pub struct LocalObserver {
    design: ObserverDesign,
    /// `P L`.
    output_injection: Matrix,
    /// `P B_i`.
    input_map: Matrix,
    s: Vector,
}

impl LocalObserver {
    /// Starts from `s(0) = 0`.
    pub fn new(design: ObserverDesign, b_known: &Matrix) -> Self {
        let output_injection = &design.p * &design.l;
        let input_map = &design.p * b_known;
        let s = Vector::zeros(design.p.nrows());
        Self {
            design,
            output_injection,
            input_map,
            s,
        }
    }

    pub fn design(&self) -> &ObserverDesign {
        &self.design
    }

    pub fn state(&self) -> &Vector {
        &self.s
    }

    pub fn output_dim(&self) -> usize {
        self.design.t.nrows() - self.design.p.nrows()
    }

    pub fn known_input_dim(&self) -> usize {
        self.input_map.ncols()
    }

    pub fn reset(&mut self, s: Vector) -> Result<(), ObserverError> {
        if s.len() != self.s.len() {
            return Err(ObserverError::DimensionMismatch {
                what: "s",
                found: s.len(),
                expected: self.s.len(),
            });
        }
        self.s = s;
        Ok(())
    }

    /// Advances `s` with the outputs and known inputs of the previous sample.
    pub fn step(&mut self, y: &Vector, u: &Vector) -> Result<&Vector, ObserverError> {
        if y.len() != self.output_dim() {
            return Err(ObserverError::DimensionMismatch {
                what: "y_i",
                found: y.len(),
                expected: self.output_dim(),
            });
        }
        if u.len() != self.known_input_dim() {
            return Err(ObserverError::DimensionMismatch {
                what: "u_i",
                found: u.len(),
                expected: self.known_input_dim(),
            });
        }
        if self.s.is_empty() {
            return Ok(&self.s);
        }
        let next = &self.design.a_bar * &self.s - &self.output_injection * y + &self.input_map * u;
        self.s = next;
        Ok(&self.s)
    }

    /// `xi_i = [s; y]`, index-aligned with the rows of `T_i = [P; C_i]`.
    pub fn assemble_xi(&self, y: &Vector) -> Vector {
        assemble_xi(&self.s, y)
    }
}

pub fn assemble_xi(s: &Vector, y: &Vector) -> Vector {
    let mut xi = Vector::zeros(s.len() + y.len());
    xi.rows_mut(0, s.len()).copy_from(s);
    xi.rows_mut(s.len(), y.len()).copy_from(y);
    xi
}
