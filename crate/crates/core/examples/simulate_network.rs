//! Builds a small design by hand, sets true parameters, and draws a dataset
//! from the meta-regression model.
//!
//! ```text
//! cargo run --example simulate_network -- [out.csv]
//! ```

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dtanet::dataset::{write_dataset, DiseaseGroup, TestDescriptor, Threshold};
use dtanet::math::logit;
use dtanet::model::{
    build_layout, draw_random_effects, simulate_dataset, CovarianceStructure, DesignCell, ModelSpec, ModelVariant,
    ParameterState, SimulationDesign,
};

fn main() {
    let tests = vec![TestDescriptor::continuous("PSA", 4.0).with_name("PSA (ng/mL)"), TestDescriptor::binary("MRI")];
    let mut cells = Vec::new();
    for i in 1..=8 {
        let study = format!("S{i}");
        let psa: Vec<Threshold> = match i % 3 {
            0 => vec![2.5, 4.0, 10.0],
            1 => vec![4.0],
            _ => vec![3.0, 4.0],
        }
        .into_iter()
        .map(Threshold::Value)
        .collect();
        for (group, n) in [(DiseaseGroup::NonDiseased, 150), (DiseaseGroup::Diseased, 60)] {
            cells.push(DesignCell { study: study.clone(), test: "PSA".into(), group, thresholds: psa.clone(), group_size: n });
            if i % 2 == 0 {
                let thresholds = vec![Threshold::NotApplicable];
                cells.push(DesignCell { study: study.clone(), test: "MRI".into(), group, thresholds, group_size: n });
            }
        }
    }
    let design = SimulationDesign { tests, cells };

    let spec = ModelSpec::new(ModelVariant::MetaRegression, CovarianceStructure::BlockDiag22);
    let layout = Arc::new(build_layout(&design.skeleton().unwrap(), &spec).unwrap());
    let mut truth = ParameterState::zeros(layout.clone());
    {
        let v = truth.values_mut();
        // PSA: sensitivity 0.85, specificity 0.45 at C* = 4
        v[layout.m[layout.test_index("PSA").unwrap()][1]] = logit(0.85);
        v[layout.m[layout.test_index("PSA").unwrap()][0]] = logit(0.55);
        v[layout.m[layout.test_index("MRI").unwrap()][1]] = logit(0.90);
        v[layout.m[layout.test_index("MRI").unwrap()][0]] = logit(0.30);
    }
    for b in 0..layout.blocks.len() {
        truth.set_covariance(b, &(DMatrix::identity(2, 2) * 0.1)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    draw_random_effects(&mut truth, &mut rng);
    let d = simulate_dataset(&spec, &truth, &design, 4).unwrap();

    let text = write_dataset(&d);
    match std::env::args().nth(1) {
        Some(path) => {
            std::fs::write(&path, text).unwrap();
            println!("wrote {} series to {path}", d.series().len());
        }
        None => print!("{text}"),
    }
}
