use proptest::prelude::*;

use sense_core::codec::{
    compress, compress_tensor, compress_window, compressed_size, decompress, decompress_coords, decompress_tensor,
    read_container, window_nnz, write_container, BlockLayout, CompressedBlock,
};
use sense_core::Tensor;

fn block() -> impl Strategy<Value = (Vec<i16>, usize, usize)> {
    (1usize..20, 1usize..20).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop_oneof![3 => Just(0i16), 1 => any::<i16>()], r * c).prop_map(move |d| (d, r, c))
    })
}

proptest! {
    #[test]
    fn round_trip((data, rows, cols) in block()) {
        let b = compress(&data, rows, cols);
        prop_assert_eq!(decompress(&b).unwrap(), data.clone());
        prop_assert_eq!(b.byte_size(), compressed_size(rows * cols, b.data_length()));
        let coords = decompress_coords(&b).unwrap();
        let expected: Vec<(usize, usize)> =
            (0..rows * cols).filter(|&k| data[k] != 0).map(|k| (k / cols, k % cols)).collect();
        prop_assert_eq!(coords, expected);
        let mut bytes = Vec::new();
        b.write_to(&mut bytes).unwrap();
        prop_assert_eq!(bytes.len(), b.byte_size());
        prop_assert_eq!(CompressedBlock::read_from(&mut bytes.as_slice(), rows, cols).unwrap(), b);
    }

    #[test]
    fn windows_match_copies(
        (data, rows, cols) in block(),
        t in 0usize..20, l in 0usize..20, h in 1usize..20, w in 1usize..20,
    ) {
        let (top, left) = (t % rows, l % cols);
        let (h, w) = (h.min(rows - top), w.min(cols - left));
        let copy: Vec<i16> = (top..top + h).flat_map(|r| data[r * cols + left..r * cols + left + w].to_vec()).collect();
        let win = compress_window(&data, cols, top, left, h, w);
        prop_assert_eq!(&win, &compress(&copy, h, w));
        prop_assert_eq!(window_nnz(&data, cols, top, left, h, w), win.data_length());
    }

    #[test]
    fn tensors_and_containers(dims in prop::collection::vec(1usize..6, 2..=4), seed in any::<u64>(), s in 0.0f64..=1.0) {
        let t = sense_core::tensor::synth_tensor(&dims, s, (-300, 300), seed).unwrap();
        let layout = BlockLayout::for_tensor(&t);
        let blocks = compress_tensor(&t, layout);
        prop_assert_eq!(decompress_tensor(dims.clone(), layout, &blocks).unwrap(), t.clone());
        prop_assert_eq!(read_container(&write_container(&t, layout).unwrap()).unwrap(), t);
    }
}

#[test]
fn corrupt_input_is_rejected() {
    let t = Tensor::new(vec![2, 3, 3], (0..18).collect()).unwrap();
    let bytes = write_container(&t, BlockLayout::Planes).unwrap();
    for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
        assert!(read_container(&bytes[..cut]).is_err(), "truncated at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(read_container(&bad).is_err());

    let b = compress(&[0, 5, 0, 7], 2, 2);
    let mut raw = Vec::new();
    b.write_to(&mut raw).unwrap();
    // claim three nonzeros while the bitmap holds two
    raw[0] = 3;
    assert!(CompressedBlock::read_from(&mut raw.as_slice(), 2, 2).is_err());
}
