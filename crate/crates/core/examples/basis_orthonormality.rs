//! Builds multiwavelet bases, prints their sizes and checks orthonormality
//! by quadrature.

use sgflow::{MwBasis, MwBasisSpec};

fn main() -> sgflow::Result<()> {
    for spec in [
        MwBasisSpec::one_dim(0, 4),
        MwBasisSpec::one_dim(2, 3),
        MwBasisSpec::total_order(2, 4, 0),
        MwBasisSpec::total_order(2, 2, 1),
    ] {
        let basis = MwBasis::new(spec)?;
        let rule = basis.build_quadrature();
        let p = basis.len();
        let mut worst: f64 = 0.0;
        let mut vals = vec![0.0; p];
        let mut gram = vec![0.0; p * p];
        for (xi, w) in rule.iter() {
            basis.eval_all(xi, &mut vals);
            for j in 0..p {
                for k in 0..p {
                    gram[j * p + k] += w * vals[j] * vals[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..p {
                let want = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((gram[j * p + k] - want).abs());
            }
        }
        println!(
            "{spec:?}: P = {p}, {} quadrature nodes, max |G - I| = {worst:.2e}",
            rule.len()
        );
    }
    let haar = MwBasis::new(MwBasisSpec::one_dim(0, 2))?;
    println!("Haar N_r=2 at ξ = -0.9, -0.3, 0.3, 0.9:");
    for xi in [-0.9, -0.3, 0.3, 0.9] {
        let row: Vec<String> = (0..haar.len())
            .map(|m| format!("{:+.3}", haar.eval_unchecked(m, &[xi])))
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
