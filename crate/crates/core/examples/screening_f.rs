//! F-statistic screening on a toy feature matrix, fed in mini-batches.
//!
//! ```text
//! cargo run --example screening_f
//! ```

use screenprune::screening::ScreeningAccumulator;
use screenprune::Tensor;

fn main() -> screenprune::Result<()> {
    // Feature 0 separates the classes, feature 1 is noise, feature 2 is constant.
    let rows = [
        ([1.0, 0.3, 5.0], 0),
        ([2.0, -0.1, 5.0], 0),
        ([3.0, 0.2, 5.0], 1),
        ([4.0, 0.0, 5.0], 1),
    ];
    let mut acc = ScreeningAccumulator::new(2, 3)?;
    for chunk in rows.chunks(2) {
        let data: Vec<f32> = chunk.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        let labels: Vec<usize> = chunk.iter().map(|(_, y)| *y).collect();
        acc.update(&Tensor::from_vec(&[chunk.len(), 3], data)?, &labels)?;
    }
    let scores = acc.finalize()?;
    println!("{} samples, {} classes", acc.samples(), acc.class_count());
    scores.write_table(std::io::stdout()).expect("stdout");
    println!("feature 0 has F = {} (between-class 4.0 over within-class 0.5)", scores.values[0]);
    Ok(())
}
