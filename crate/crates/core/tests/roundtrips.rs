//! Serialization round-trips for grids: the binary layout and the JSON
//! form must both reproduce a grid bit-for-bit, and the binary reader must
//! reject malformed input without panicking.

use prekopa_core::{BoxDomain, GridDensity};
use proptest::prelude::*;

/// Strategy for a valid grid: dimension 1..=3, small per-axis resolutions,
/// positive finite values.
fn grids() -> impl Strategy<Value = GridDensity> {
    (1usize..=3)
        .prop_flat_map(|d| {
            let axis = (-10.0f64..0.0, 0.5f64..10.0, 8usize..=10);
            (prop::collection::vec(axis, d..=d),)
        })
        .prop_flat_map(|(axes,)| {
            let lo: Vec<f64> = axes.iter().map(|a| a.0).collect();
            let hi: Vec<f64> = axes.iter().map(|a| a.0 + a.1).collect();
            let res: Vec<usize> = axes.iter().map(|a| a.2).collect();
            let count: usize = res.iter().product();
            prop::collection::vec(1e-3f64..1e3, count..=count).prop_map(move |values| {
                GridDensity::from_values(
                    BoxDomain::new(lo.clone(), hi.clone()).unwrap(),
                    res.clone(),
                    values,
                )
                .unwrap()
            })
        })
}

proptest! {
    #[test]
    fn binary_roundtrip_is_identity(g in grids()) {
        let back = GridDensity::from_bytes(&g.to_bytes()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn json_roundtrip_is_identity(g in grids()) {
        let text = serde_json::to_string(&g).unwrap();
        let back: GridDensity = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn truncated_binary_is_rejected(g in grids(), cut in 0.0f64..1.0) {
        let bytes = g.to_bytes();
        let keep = ((bytes.len() as f64) * cut) as usize;
        prop_assert!(GridDensity::from_bytes(&bytes[..keep]).is_err());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        // Err is fine; only a panic would fail the property.
        let _ = GridDensity::from_bytes(&bytes);
    }
}
