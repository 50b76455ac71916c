//! Built-in benchmark problems with their reference certificates and gains.

use nalgebra::{DMatrix, DVector};

use crate::markov::ModeChain;
use crate::renewal::{IntervalDistribution, DEFAULT_TAIL_TOL};
use crate::stability::{SwitchedSystem, ZetaCertificate};

#[derive(Debug, Clone)]
pub struct BuiltinExample {
    pub id: u32,
    pub system: SwitchedSystem,
    pub chain: ModeChain,
    pub observation: IntervalDistribution,
    /// Reference `(R_tilde, L, zeta)`, rounded to four decimals.
    pub certificate: ZetaCertificate,
    /// Reference gains `K_i = L_i R_tilde^{-1}` as printed alongside the certificate.
    pub reference_gains: Vec<DMatrix<f64>>,
    pub x0: DVector<f64>,
    /// Gap bound for the bounded-gap conditions, when the example uses them.
    pub tau_bar: Option<usize>,
}

fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Two modes, geometric observation gaps with `theta = 0.3`.
pub fn example1() -> BuiltinExample {
    let system = SwitchedSystem::new(
        vec![m(2, 2, &[0.0, 1.0, 1.6, -0.3]), m(2, 2, &[0.0, 1.0, -0.5, 1.4])],
        vec![m(2, 1, &[0.0, 1.0]), m(2, 1, &[0.0, -1.0])],
    )
    .expect("example 1 system");
    let chain = ModeChain::new(m(2, 2, &[0.7, 0.3, 0.3, 0.7]), 0).expect("example 1 chain");
    BuiltinExample {
        id: 1,
        system,
        chain,
        observation: IntervalDistribution::geometric(0.3, DEFAULT_TAIL_TOL).expect("theta"),
        certificate: ZetaCertificate {
            zeta: m(2, 2, &[0.7, 1.8, 2.0, 0.8]),
            r_tilde: m(2, 2, &[3.0143, -0.1485, -0.1485, 1.5280]),
            l: vec![m(1, 2, &[-3.5326, 0.9608]), m(1, 2, &[-3.0029, 1.8284])],
        },
        reference_gains: vec![m(1, 2, &[-1.1465, 0.5174]), m(1, 2, &[-0.9718, 1.1021])],
        x0: DVector::from_vec(vec![1.0, -1.0]),
        tau_bar: None,
    }
}

/// Three modes, gaps uniform on `{2, ..., 5}`, certified through the
/// bounded-gap conditions with `tau_bar = 5`.
pub fn example2() -> BuiltinExample {
    let system = SwitchedSystem::new(
        vec![
            m(2, 2, &[0.0, 1.0, 1.5, 0.5]),
            m(2, 2, &[0.0, 1.0, 1.0, 0.5]),
            m(2, 2, &[0.0, -1.0, 1.1, 1.2]),
        ],
        vec![m(2, 1, &[0.0, 1.0]), m(2, 1, &[0.0, 0.2]), m(2, 1, &[0.0, 0.7])],
    )
    .expect("example 2 system");
    let chain = ModeChain::new(
        m(3, 3, &[0.6, 0.2, 0.2, 0.2, 0.6, 0.2, 0.2, 0.2, 0.6]),
        0,
    )
    .expect("example 2 chain");
    BuiltinExample {
        id: 2,
        system,
        chain,
        observation: IntervalDistribution::uniform(2, 5).expect("bounds"),
        certificate: ZetaCertificate {
            zeta: m(3, 3, &[0.6, 1.7, 1.5, 1.6, 0.7, 2.0, 2.0, 2.0, 0.5]),
            r_tilde: m(2, 2, &[2.6465, -0.7851, -0.7851, 1.2568]),
            l: vec![
                m(1, 2, &[-3.5858, 0.1413]),
                m(1, 2, &[-4.7066, -0.3329]),
                m(1, 2, &[-3.2532, -0.3601]),
            ],
        },
        reference_gains: vec![
            m(1, 2, &[-1.6222, -0.9009]),
            m(1, 2, &[-2.2794, -1.6888]),
            m(1, 2, &[-1.6132, -1.2942]),
        ],
        x0: DVector::from_vec(vec![1.0, -1.0]),
        tau_bar: Some(5),
    }
}

pub fn example(id: u32) -> Option<BuiltinExample> {
    match id {
        1 => Some(example1()),
        2 => Some(example2()),
        _ => None,
    }
}
