//! Leave-one-out query evaluation on hand-made embeddings, with the per-query
//! table the CLI writes as queries.csv.

use mmreid::evaluation::{average_precision, expected_random_ap, inverse_negative_penalty, looq_evaluate};
use mmreid::tensor::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Three identities on a circle; the third one overlaps the first.
    let pts = [(1.0, 0.0), (0.9, 0.1), (0.0, 1.0), (0.1, 0.9), (0.95, -0.1), (0.2, 0.8)];
    let labels = [0, 0, 1, 1, 2, 2];
    let ids: Vec<String> = (0..pts.len()).map(|k| format!("p{k}")).collect();
    let emb = Tensor::new(&[pts.len(), 2], pts.iter().flat_map(|&(x, y)| [x, y]).collect())?;
    let report = looq_evaluate(&emb, &labels, &ids)?;
    print!("{}", report.query_csv(&["a".into(), "b".into(), "c".into()]));
    println!("{:?}", report.metrics);

    println!("AP of [x, hit]        = {:?}", average_precision(&[false, true]));
    println!("INP of [hit, x, x, hit] = {:?}", inverse_negative_penalty(&[true, false, false, true]));
    println!("random ranking, 99 candidates, 9 matches: expected AP {:.4}", expected_random_ap(99, 9));
    Ok(())
}
