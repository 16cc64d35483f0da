use sense_web::{cluster_view, sparsity_points, trace_view};

#[test]
fn diagonal_block_traces_eight_events() {
    let t = trace_view("10,0,0,0;0,20,0,0;0,0,30,0;0,0,0,40", "10,0;0,20", 1).unwrap();
    assert_eq!((t.h_out, t.w_out), (3, 3));
    assert_eq!(t.events.len(), 8);
    assert_eq!(t.invalid, 2);
    assert!(t.matches_oracle);
    assert_eq!(t.psum, vec![500, 0, 0, 0, 800, 0, 0, 0, 1100]);
    assert_eq!(t.dense_cycles, 64);
    assert_eq!(t.speedup, Some(8.0));
}

#[test]
fn bad_trace_inputs_are_errors() {
    assert!(trace_view("1,2;3", "1", 1).is_err());
    assert!(trace_view("1,2;3,4", "1,x", 1).is_err());
    assert!(trace_view("1,2;3,4", "1;2;3", 1).is_err());
    assert!(trace_view("1,2;3,4", "1", 0).is_err());
}

#[test]
fn clustering_pairs_heavy_with_heavy() {
    let c = cluster_view("4,1,4,1", 2).unwrap();
    assert_eq!(c.unclustered_cycles, 8);
    assert_eq!(c.clustered_cycles, 5);
    assert!(cluster_view("1,-2", 2).is_err());
    assert!(cluster_view("1,2", 0).is_err());
}

#[test]
fn weight_curve_follows_the_kept_fraction() {
    let pts = sparsity_points("weight_sparsity", 4).unwrap();
    assert_eq!(pts.len(), 4);
    for p in &pts {
        let expected = 1.0 / (1.0 - p.sparsity);
        assert!((p.speedup.unwrap() - expected).abs() < 0.05 * expected, "{p:?}");
    }
    assert!(sparsity_points("n_pe", 4).is_err());
    assert!(sparsity_points("ifm_sparsity", 1).is_err());
}
