use std::time::Instant;

use picbnn::bnn::{train, TrainConfig};
use picbnn::data_io::{binarize_dataset, load_mnist, MnistSplit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data/mnist".into());
    let epochs: usize = std::env::args().nth(2).map_or(Ok(20), |s| s.parse())?;
    let train_set = binarize_dataset(&load_mnist(&dir, MnistSplit::Train)?, 0.5)?;
    let test_set = binarize_dataset(&load_mnist(&dir, MnistSplit::Test)?, 0.5)?;
    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let start = Instant::now();
    let trained = train::<f32>(&train_set, &[784, 128, 10], &cfg)?;
    let correct = test_set
        .inputs
        .iter()
        .zip(&test_set.labels)
        .filter(|(x, &l)| trained.model.predict(x).ok() == Some(l as usize))
        .count();
    println!("{:?}", trained.report);
    println!(
        "test accuracy {:.4} in {:.1}s",
        correct as f64 / test_set.len() as f64,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
