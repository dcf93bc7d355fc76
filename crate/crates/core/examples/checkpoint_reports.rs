//! Everything that can be read off a saved checkpoint: layer-wise compression,
//! batch-norm channel counts, the weight-magnitude histogram and the first
//! dense layer's mask as a PGM image.
//!
//! ```text
//! cargo run --example checkpoint_reports -- runs/smoke/best.ckpt [out_dir]
//! ```

use std::path::PathBuf;

use screenprune::harness::checkpoint::Checkpoint;
use screenprune::harness::reports::*;

fn main() -> screenprune::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "runs/smoke/best.ckpt".into()));
    let out = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    let ckpt = Checkpoint::load(&path)?;
    println!(
        "{}: epoch {}, method {}, recorded test error {:?}",
        path.display(),
        ckpt.epoch,
        ckpt.info.method,
        ckpt.info.test_error
    );

    let (h, rows) = compression_cells(&layer_compression(&ckpt.network));
    print!("\n{}", text_table(&h, &rows));

    let channels = channels_per_layer(&ckpt.network)?;
    if !channels.is_empty() {
        let (h, rows) = channel_cells(&channels);
        print!("\n{}", text_table(&h, &rows));
    }

    let (h, rows) = histogram_cells(&weight_histogram(&ckpt.network, 20)?);
    print!("\n{}", text_table(&h, &rows));

    if let Some(layer) = ckpt.network.layer_names().into_iter().find(|n| n.starts_with("fc")) {
        let file = out.join(format!("{layer}_mask.pgm"));
        std::fs::write(&file, mask_pgm(&ckpt.network, &layer)?).expect("writable output directory");
        println!("\nwrote {}", file.display());
    }
    Ok(())
}
