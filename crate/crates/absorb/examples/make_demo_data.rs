//! Regenerates the bundled demo dataset at `data/demo_dataset.csv`:
//! experiment design 3 (moderate heterogeneity, asymmetric selection),
//! 50 studies, seed 1.
//!
//! Run from the workspace root:
//! ```text
//! cargo run -p absorb --example make_demo_data
//! ```

use absorb::sim::{generate_dataset, SimTruth};

fn main() {
    let truth = SimTruth::experiment(3, 50).expect("design 3 exists");
    let sim = generate_dataset(&truth, 1).expect("feasible design");
    let csv = sim.observed.to_csv();
    std::fs::create_dir_all("data").expect("create data/");
    std::fs::write("data/demo_dataset.csv", &csv).expect("write dataset");
    println!(
        "wrote data/demo_dataset.csv: {} studies (m1={}, m2={}, m3={}), {} completely missing",
        sim.observed.n_studies(),
        sim.observed.m1,
        sim.observed.m2,
        sim.observed.m3,
        sim.observed.k_missing
    );
}
