//! Samples time-contrastive triplets over a demonstration's frames and
//! scores two embeddings with the combined loss.

use telefleet::analytics::tcn::{sample_triplets, tcn_loss, Embeddings, TripletConfig, TripletKind};

fn circle(frames: usize, speed: f32) -> Embeddings {
    let data = (0..frames).flat_map(|i| {
        let a = i as f32 * speed;
        [a.cos(), a.sin()]
    });
    Embeddings::new(frames, 2, data.collect()).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TripletConfig::default();
    for frames in [72, 120] {
        let set = sample_triplets(frames, &cfg, 500, 1)?;
        let inter = set.triplets.iter().filter(|t| t.kind == TripletKind::InterChunk).count();
        println!("F={frames}: {} triplets ({inter} inter-chunk), omitted {:?}", set.triplets.len(), set.omitted);
    }

    let frames = 120;
    let set = sample_triplets(frames, &cfg, 500, 1)?;
    let terminal: Vec<usize> = cfg.terminal_frames(frames).collect();
    // time laid out along an arc scores better than a constant embedding
    for (name, emb) in [("collapsed", circle(frames, 0.0)), ("arc", circle(frames, 0.02))] {
        let loss = tcn_loss(&emb, &set.triplets, &cfg, &terminal)?;
        println!("{name:>9}: hf {:.4} lf {:.4} terminal {:.4} total {:.4}", loss.high_freq, loss.low_freq, loss.terminal, loss.total);
    }
    Ok(())
}
