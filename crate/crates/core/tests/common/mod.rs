pub mod hand_metrics;
