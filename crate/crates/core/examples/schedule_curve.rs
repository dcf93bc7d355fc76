//! Kept-member counts of the logistic pruning schedule as CSV, one column per
//! decay rate, for plotting.
//!
//! ```text
//! cargo run --example schedule_curve -- [epochs] [kept_fraction] [initial]
//! ```

use screenprune::pruning::{keep_count, logistic_progress};

fn main() -> screenprune::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let epochs: usize = args.first().and_then(|a| a.parse().ok()).unwrap_or(80);
    let ratio: f64 = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(0.043);
    let initial: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(267_000);
    let rates = [2.0, 4.0, 6.0, 8.0];

    print!("epoch");
    for k in rates {
        print!(",progress_k{k},kept_k{k}");
    }
    println!();
    for e in 0..=epochs {
        print!("{e}");
        for k in rates {
            print!(",{:.6},{}", logistic_progress(e, epochs, k), keep_count(e, epochs, ratio, k, initial)?);
        }
        println!();
    }
    Ok(())
}
