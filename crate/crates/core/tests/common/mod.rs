#![allow(dead_code)]

use std::path::PathBuf;

use duio::cli::file::ScenarioFile;
use duio::fusion;
use duio::graph::Topology;
use duio::numerics;
use duio::scenario::Scenario;
use duio::{Matrix, Tolerance, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
}

pub fn load_file(name: &str) -> ScenarioFile {
    ScenarioFile::load(&scenario_path(name)).expect("bundled scenario parses")
}

pub fn load(name: &str) -> Scenario {
    load_file(name)
        .to_scenario()
        .expect("bundled scenario is valid")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

/// Random spanning tree plus each remaining edge with probability 0.3.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, nodes: usize) -> Topology {
    let mut edges = Vec::new();
    for i in 1..nodes {
        edges.push((rng.random_range(0..i), i));
    }
    for i in 0..nodes {
        for j in (i + 1)..nodes {
            if !edges.contains(&(i, j)) && rng.random_bool(0.3) {
                edges.push((i, j));
            }
        }
    }
    Topology::new(nodes, &edges).expect("edges are valid")
}

/// Fusion data with `λ_min(Σ T_i^T T_i) ≥ 1e-3 λ_max`.
pub struct FusionInstance {
    pub t_list: Vec<Matrix>,
    pub xi_list: Vec<Vector>,
    pub graph: Topology,
}

pub fn random_fusion_instance(rng: &mut ChaCha8Rng, min_nodes: usize) -> FusionInstance {
    loop {
        let nodes = rng.random_range(min_nodes..=5);
        let n = rng.random_range(1..=6);
        let t_list: Vec<Matrix> = (0..nodes)
            .map(|_| {
                let rows = rng.random_range(1..=n);
                random_matrix(rng, rows, n)
            })
            .collect();
        let h = fusion::hessian(&t_list).unwrap();
        let ev = numerics::symmetric_eigenvalues(&h, &Tolerance::default()).unwrap();
        if ev[0] < 1e-3 * ev[n - 1] {
            continue;
        }
        let xi_list = t_list
            .iter()
            .map(|t| random_vector(rng, t.nrows()))
            .collect();
        let graph = random_connected_graph(rng, nodes);
        return FusionInstance {
            t_list,
            xi_list,
            graph,
        };
    }
}
