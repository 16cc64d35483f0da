use proptest::prelude::*;

use sense_core::cluster::RankingScope;
use sense_core::dataflow::{build_layer_schedule, make_tiling, DataflowPolicy, ScheduleInputs};
use sense_core::network::LayerConfig;
use sense_core::prune::{keep_count, prune_conv_layer, PruneSpec};
use sense_core::sim::analyze_layer;
use sense_core::tensor::synth_tensor;
use sense_core::timing::{simulate_layer_timing, ComputeMode, LayerTiming};
use sense_core::Tensor;

fn timing(cfg: &LayerConfig, ifm: &Tensor, w: &Tensor, n_is: usize, n_pe: usize, scope: RankingScope) -> LayerTiming {
    let padded = ifm.pad_spatial(cfg.pad);
    let a = analyze_layer(cfg, &padded, w, n_is, n_pe, scope);
    let inputs = ScheduleInputs {
        config: Some(*cfg),
        i_mem: Some(a.i_mem),
        w_mem: Some(a.w_mem),
        nzew_max: Some(a.nzew_max),
        rankings: Some(a.rankings),
    };
    let policy = DataflowPolicy {
        n_is,
        n_pe,
        ..Default::default()
    };
    let s = build_layer_schedule(0, &inputs, &policy).unwrap();
    simulate_layer_timing(&s, &a.counts, ComputeMode::Sparse).unwrap()
}

fn shape(max_c: usize) -> impl Strategy<Value = LayerConfig> {
    (1..=max_c, 1..=max_c, 3usize..14, 1usize..4, 1usize..3, 0usize..2).prop_filter_map(
        "kernel must fit",
        |(ci, co, h, k, s, p)| {
            let cfg = LayerConfig::conv(ci, co, h, h, k, k, s, p);
            cfg.validate().ok().map(|_| cfg)
        },
    )
}

proptest! {
    #[test]
    fn utilization_is_a_fraction(cfg in shape(10), si in 0.0f64..1.0, keep in 0.1f64..=1.0, seed in any::<u64>(), n_is in 1usize..8, n_pe in 1usize..6) {
        let ifm = synth_tensor(&cfg.ifm_dims(), si, (1, 9), seed).unwrap();
        let dense = synth_tensor(&cfg.weight_dims(), 0.0, (-9, 9), seed ^ 1).unwrap();
        let w = prune_conv_layer(&dense, &PruneSpec::new(keep, 1.0)).unwrap().0;
        let t = timing(&cfg, &ifm, &w, n_is, n_pe, RankingScope::Global);
        for m in [t.sparse, t.dense] {
            prop_assert!(m.useful + m.idle <= m.cycles * t.active_pes);
        }
        prop_assert_eq!(t.dense.idle, 0);
        prop_assert!(t.sparse.cycles <= t.dense.cycles);
    }

    #[test]
    fn balanced_kernels_on_dense_inputs_speed_up_by_k_over_keep(cfg in shape(8), keep in 0.1f64..=1.0, seed in any::<u64>(), n_is in 1usize..8, n_pe in 1usize..6) {
        let cfg = LayerConfig { pad: 0, ..cfg };
        prop_assume!(cfg.validate().is_ok());
        let ifm = synth_tensor(&cfg.ifm_dims(), 0.0, (1, 9), seed).unwrap();
        let dense = synth_tensor(&cfg.weight_dims(), 0.0, (-9, 9), seed ^ 1).unwrap();
        let w = prune_conv_layer(&dense, &PruneSpec::new(keep, 1.0)).unwrap().0;
        let t = timing(&cfg, &ifm, &w, n_is, n_pe, RankingScope::Global);
        let (k, kept) = (cfg.kernel_len() as u64, keep_count(keep, cfg.kernel_len()) as u64);
        prop_assert_eq!(t.dense.cycles * kept, t.sparse.cycles * k);
    }

    #[test]
    fn ifm_sparsity_speedup_is_bounded(cfg in shape(8), si in 0.0f64..0.95, seed in any::<u64>(), n_is in 1usize..8, n_pe in 1usize..6) {
        // a short trailing IC group costs a full dense step, so the bound needs full groups
        prop_assume!(cfg.c_in % n_pe == 0 || cfg.c_in < n_pe);
        let ifm = synth_tensor(&cfg.ifm_dims(), si, (1, 9), seed).unwrap();
        let w = synth_tensor(&cfg.weight_dims(), 0.0, (-9, 9), seed ^ 1).unwrap();
        let t = timing(&cfg, &ifm, &w, n_is, n_pe, RankingScope::Global);
        // upper bound from first principles: tile elements over tile nonzeros, halos counted per tile
        let padded = ifm.pad_spatial(cfg.pad);
        let (hp, wp) = (cfg.padded_h(), cfg.padded_w());
        let plan = make_tiling(&cfg, n_is, n_pe);
        let (mut elems, mut nnz) = (0u64, 0u64);
        for (r, c) in plan.tiles() {
            for plane in padded.data().chunks(hp * wp) {
                for y in r.ifm_start..r.ifm_start + r.ifm_len {
                    for x in c.ifm_start..c.ifm_start + c.ifm_len {
                        elems += 1;
                        nnz += u64::from(plane[y * wp + x] != 0);
                    }
                }
            }
        }
        prop_assume!(nnz > 0);
        prop_assert!(t.sparse.cycles <= t.dense.cycles);
        prop_assert!(t.dense.cycles * nnz <= t.sparse.cycles * elems);
    }

    #[test]
    fn clustering_helps_single_tile_layers(ci in 2usize..16, co in 1usize..6, h in 3usize..8, keep in 0.1f64..=1.0, si in 0.0f64..1.0, seed in any::<u64>(), n_pe in 1usize..5) {
        let cfg = LayerConfig::conv(ci, co, h, h, 3, 3, 1, 0);
        let ifm = synth_tensor(&cfg.ifm_dims(), si, (1, 9), seed).unwrap();
        let dense = synth_tensor(&cfg.weight_dims(), 0.0, (-9, 9), seed ^ 1).unwrap();
        let w = prune_conv_layer(&dense, &PruneSpec::new(keep, 1.0)).unwrap().0;
        let on = timing(&cfg, &ifm, &w, 8, n_pe, RankingScope::Global);
        let off = timing(&cfg, &ifm, &w, 8, n_pe, RankingScope::Off);
        prop_assert!(on.sparse.cycles <= off.sparse.cycles);
        prop_assert_eq!(on.sparse.useful, off.sparse.useful);
    }
}
