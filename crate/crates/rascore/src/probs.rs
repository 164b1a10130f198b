//! Collapse per-pixel class probabilities into a label mask.

use crate::error::{RasterError, Result};
use crate::types::{ClassScheme, LabelMask};

/// Per-pixel argmax over a probability cube, ties broken toward the lower
/// class id. `probs` is class-major: index = (class * height + y) * width + x.
pub fn labels_from_probabilities(
    probs: &[f32],
    height: u32,
    width: u32,
    scheme: &ClassScheme,
    gsd_m: f32,
) -> Result<LabelMask> {
    let classes = scheme.len();
    let plane = height as usize * width as usize;
    if probs.len() != classes * plane {
        return Err(RasterError::Invariant(format!(
            "probability cube has {} values, expected {} classes * {} pixels",
            probs.len(),
            classes,
            plane
        )));
    }
    let mut values = Vec::with_capacity(plane);
    for y in 0..height {
        for x in 0..width {
            let pix = y as usize * width as usize + x as usize;
            let mut best = 0usize;
            let mut best_p = f32::NEG_INFINITY;
            for c in 0..classes {
                let p = probs[c * plane + pix];
                if p.is_nan() {
                    return Err(RasterError::NanProbability { x, y });
                }
                // strict '>' keeps the lowest class id on ties
                if p > best_p {
                    best_p = p;
                    best = c;
                }
            }
            values.push(best as u8);
        }
    }
    LabelMask::new(width, height, scheme.clone(), values, gsd_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class_scheme() -> ClassScheme {
        ClassScheme::new(
            "pair",
            vec![
                crate::types::ClassDef { id: 0, label: "a".into(), color: [0, 0, 0] },
                crate::types::ClassDef { id: 1, label: "b".into(), color: [1, 1, 1] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn picks_highest_probability() {
        let scheme = ClassScheme::new(
            "t",
            vec![
                crate::types::ClassDef { id: 0, label: "a".into(), color: [0; 3] },
                crate::types::ClassDef { id: 1, label: "b".into(), color: [0; 3] },
                crate::types::ClassDef { id: 2, label: "c".into(), color: [0; 3] },
            ],
        )
        .unwrap();
        let probs = [0.1, 0.7, 0.2]; // single pixel, 3 classes
        let mask = labels_from_probabilities(&probs, 1, 1, &scheme, 10.0).unwrap();
        assert_eq!(mask.values, vec![1]);
    }

    #[test]
    fn ties_break_to_lower_id() {
        let probs = [0.5, 0.5];
        let mask = labels_from_probabilities(&probs, 1, 1, &two_class_scheme(), 10.0).unwrap();
        assert_eq!(mask.values, vec![0]);
    }

    #[test]
    fn nan_probability_is_an_error() {
        let probs = [0.5, f32::NAN];
        assert!(matches!(
            labels_from_probabilities(&probs, 1, 1, &two_class_scheme(), 10.0),
            Err(RasterError::NanProbability { x: 0, y: 0 })
        ));
    }

    #[test]
    fn wrong_cube_size_is_an_error() {
        let probs = [0.5, 0.5, 0.1];
        assert!(labels_from_probabilities(&probs, 1, 1, &two_class_scheme(), 10.0).is_err());
    }
}
