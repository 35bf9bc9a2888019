//! Saves a model, reloads it and checks the round trip is bitwise.

use attnbias::model::{forward, init_model, load_checkpoint, load_checkpoint_expecting, save_checkpoint, ModelConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ModelConfig::classifier(32, 4, 2, 8, 2);
    let model = init_model(&cfg, 3)?;
    let dir = std::env::temp_dir().join("attnbias-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("classifier.abl");

    save_checkpoint(&model, &path)?;
    let loaded = load_checkpoint(&path)?;
    println!("{} parameters, identical after reload: {}", model.total_params(), loaded == model);
    let tokens = [0, 65, 66, 65];
    println!("same logits: {}", forward(&model, &tokens)? == forward(&loaded, &tokens)?);

    let other = ModelConfig::classifier(32, 4, 3, 8, 2);
    match load_checkpoint_expecting(&path, &other) {
        Ok(_) => println!("unexpected: mismatched config accepted"),
        Err(e) => println!("mismatched config rejected: {e}"),
    }
    Ok(())
}
