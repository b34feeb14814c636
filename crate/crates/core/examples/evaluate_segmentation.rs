//! Scores a corrupted copy of a labeled cloud against the original.
//!
//! ```sh
//! cargo run --release --example evaluate_segmentation
//! ```

use sylva::labels::Semantic;
use sylva::ml::{aggregate_instance_metrics, evaluate_instances, evaluate_semantics, Aggregation, MeanIouMode, SegmentationResult};
use sylva::rng::Stream;

fn main() -> sylva::Result<()> {
    // Three trees of 100 points plus 50 ground points.
    let mut instance = vec![0u32; 50];
    for t in 1..=3 {
        instance.extend(std::iter::repeat_n(t, 100));
    }
    let semantic: Vec<Semantic> = instance.iter().map(|&i| if i == 0 { Semantic::NonTree } else { Semantic::Tree }).collect();
    let gt = SegmentationResult { instance, semantic };

    // Tree 3 is merged into tree 2 and a few labels are flipped.
    let mut pred = gt.clone();
    let mut rng = Stream::new(4, &[]);
    for i in 0..pred.len() {
        if pred.instance[i] == 3 {
            pred.instance[i] = 2;
        }
        if rng.next_f64() < 0.05 {
            pred.semantic[i] = match pred.semantic[i] {
                Semantic::Tree => Semantic::NonTree,
                _ => Semantic::Tree,
            };
        }
    }

    let inst = evaluate_instances(&pred, &gt, 0.5, MeanIouMode::Matched)?;
    print!("{}", inst.to_report());
    let all_gt = evaluate_instances(&pred, &gt, 0.5, MeanIouMode::AllGroundTruth)?;
    println!("mean_iou over all ground-truth trees = {:.2}\n", all_gt.mean_iou);
    print!("{}", evaluate_semantics(&pred.semantic, &gt.semantic)?.to_report());

    let perfect = evaluate_instances(&gt, &gt, 0.5, MeanIouMode::Matched)?;
    let mean = aggregate_instance_metrics(&[inst, perfect], &[350, 350], Aggregation::Unweighted);
    println!("\nmean over 2 samples: f1 {:.2}", mean.f1);
    Ok(())
}
