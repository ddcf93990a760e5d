//! Panel ingestion, walk-forward planning, standardization and windowing.

mod panel;
mod plan;
mod synthetic;
mod window;

pub use panel::{load_panel, parse_timestamp, FilledGap, Panel, MAX_FILL_HOURS};
pub use plan::{
    channel_stats, destandardize_rows, lengths_for_windows, standardize_rows, walk_forward_split, ChannelStats,
    StandardizedRange, Subset, SubsetData, SubsetRole, WalkForwardPlan,
};
pub use synthetic::SyntheticSpec;
pub use window::{window_count, windowize, WindowSet};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn panel(n: usize) -> Panel {
        SyntheticSpec {
            channels: 2,
            length: n,
            ..SyntheticSpec::default()
        }
        .generate()
        .unwrap()
    }

    #[test]
    fn window_count_examples() {
        assert_eq!(window_count(100, 48), 5);
        assert_eq!(window_count(96, 48), 1);
        assert_eq!(window_count(1903, 48), 1808);
        let (train, eval) = lengths_for_windows(1808, 308, 48);
        assert_eq!((train, eval), (1903, 403));
        assert_eq!(window_count(eval, 48), 308);
        let v: Vec<f64> = (0..200).map(f64::from).collect();
        let w = windowize(&v, 2, 48).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w.inputs.data()[0..2], [0.0, 1.0]);
        assert_eq!(w.targets.data()[0..2], [96.0, 97.0]);
        assert!(matches!(windowize(&v, 2, 51), Err(Error::Data(_))));
    }

    #[test]
    fn split_examples() {
        let p = panel(2000);
        let plan = walk_forward_split(&p, 17, 200, 100, 2).unwrap();
        assert_eq!(plan.test().count(), 15);
        assert_eq!(plan.validation().count(), 2);
        for w in plan.subsets.windows(2) {
            assert_eq!(w[0].eval.end, w[1].eval.start);
        }
        assert_eq!(plan.subsets.last().unwrap().eval.end, 2000);
        let single = walk_forward_split(&p, 1, 200, 100, 0).unwrap();
        assert_eq!(single.subsets.len(), 1);
        let err = walk_forward_split(&p, 17, 400, 100, 2).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("2100") && err.to_string().contains("2000"));
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let p = panel(1500);
        let plan = walk_forward_split(&p, 3, 500, 300, 2).unwrap();
        for k in 0..3 {
            let d = plan.standardize(&p, k).unwrap();
            let st = channel_stats(&d.train.values, 2);
            for s in st {
                assert!(s.mean.abs() < 1e-9);
                assert!((s.std - 1.0).abs() < 1e-9);
            }
            let back = destandardize_rows(&d.train.values, &d.stats);
            let s = &plan.subsets[k];
            for (a, b) in back.iter().zip(p.rows(s.train.start, s.train.end)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_channel_is_rejected() {
        let ts: Vec<_> = (0..100)
            .map(|t| parse_timestamp("2020-01-01T00:00:00").unwrap() + chrono::TimeDelta::hours(t))
            .collect();
        let p = Panel::new(ts, vec!["flat".into()], vec![1.0; 100]).unwrap();
        let err = walk_forward_split(&p, 1, 50, 50, 1).unwrap_err();
        assert!(err.to_string().contains("flat"));
    }
}
