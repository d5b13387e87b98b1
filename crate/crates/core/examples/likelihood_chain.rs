//! The threshold likelihood for one series: positives at increasing
//! thresholds scored as a chain of conditional binomials, checked against
//! the multinomial over threshold intervals.

use dtanet::dataset::{DiseaseGroup, Threshold, ThresholdSeries};
use dtanet::likelihood::{chain_loglik, multinomial_oracle, positive_prob, saturated_loglik, AccuracyParams};

fn main() {
    // 120 diseased patients; positives at 5, 10, 20 and 40 units
    let series = ThresholdSeries {
        study_id: "S1".into(),
        test_id: "marker".into(),
        group: DiseaseGroup::Diseased,
        group_size: 120,
        thresholds: [5.0, 10.0, 20.0, 40.0].map(Threshold::Value).to_vec(),
        positives: vec![104, 88, 61, 30],
    };
    println!("{:>8} {:>10} {:>10} {:>10} {:>10}", "location", "log-scale", "chain", "multinom", "deviance");
    let sat = saturated_loglik(&series);
    for (mu, ls) in [(0.5, 0.0), (1.0, 0.0), (1.2, -0.3), (1.2, 0.3)] {
        let a = AccuracyParams::continuous(mu, ls, 10.0);
        let p: Vec<f64> = series.thresholds.iter().map(|&t| positive_prob(&a, t).unwrap()).collect();
        let chain = chain_loglik(&series, &p).unwrap();
        let multi = multinomial_oracle(&series, &p).unwrap();
        println!("{mu:>8.2} {ls:>10.2} {chain:>10.4} {multi:>10.4} {:>10.4}", 2.0 * (sat - chain));
    }

    let a = AccuracyParams::continuous(1.2, 0.0, 10.0);
    println!("\nP(positive) by threshold at location 1.2, scale 1, C* = 10:");
    for c in [2.5, 5.0, 10.0, 20.0, 40.0, 80.0] {
        println!("  {c:>5}: {:.3}", positive_prob(&a, Threshold::Value(c)).unwrap());
    }
}
