//! Connected-component cleanup of change labels.

use crate::sample::LabelMap;
use crate::taxonomy::IGNORE_LABEL;

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// A maximal 8-connected set of pixels sharing one change class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub class: u8,
    pub pixels: Vec<usize>,
}

/// All 8-connected components of non-zero, non-ignore classes, in raster
/// order of their first pixel.
pub fn change_components(label: &LabelMap) -> Vec<Component> {
    let (h, w) = (label.height, label.width);
    let mut visited = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        let class = label.data[start];
        if visited[start] || class == 0 || class == IGNORE_LABEL {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for (dy, dx) in NEIGHBOURS {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !visited[j] && label.data[j] == class {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        pixels.sort_unstable();
        out.push(Component { class, pixels });
    }
    out
}

/// Relabels to 0 every change component with fewer than `min_px` pixels.
/// Ignore pixels and larger components are left as they are.
pub fn filter_small_regions(label: &LabelMap, min_px: usize) -> LabelMap {
    let mut out = label.clone();
    for comp in change_components(label) {
        if comp.pixels.len() < min_px {
            for i in comp.pixels {
                out.data[i] = 0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_block(h: usize, w: usize, class: u8, y0: usize, x0: usize, bh: usize, bw: usize) -> LabelMap {
        let mut l = LabelMap::filled(h, w, 0);
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                l.set(y, x, class);
            }
        }
        l
    }

    #[test]
    fn drops_99_keeps_100() {
        // 9x11 = 99 pixels, 10x10 = 100 pixels
        let small = with_block(64, 64, 2, 5, 5, 9, 11);
        assert_eq!(filter_small_regions(&small, 100), LabelMap::filled(64, 64, 0));
        let exact = with_block(64, 64, 2, 5, 5, 10, 10);
        assert_eq!(filter_small_regions(&exact, 100), exact);
    }

    #[test]
    fn all_zero_unchanged() {
        let l = LabelMap::filled(16, 16, 0);
        assert_eq!(filter_small_regions(&l, 100), l);
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let mut l = LabelMap::filled(8, 8, 0);
        for i in 0..8 {
            l.set(i, i, 3);
        }
        let comps = change_components(&l);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].pixels.len(), 8);
    }

    #[test]
    fn different_classes_are_separate_and_ignore_untouched() {
        let mut l = with_block(20, 20, 1, 0, 0, 10, 10);
        for y in 0..10 {
            l.set(y, 10, 4);
            l.set(y, 11, IGNORE_LABEL);
        }
        let out = filter_small_regions(&l, 50);
        assert_eq!(out.get(0, 0), 1);
        assert_eq!(out.get(0, 10), 0);
        assert_eq!(out.get(0, 11), IGNORE_LABEL);
    }

    proptest! {
        #[test]
        fn idempotent(cells in proptest::collection::vec(0u8..4, 24 * 24), min_px in 1usize..20) {
            let l = LabelMap::new(24, 24, cells).unwrap();
            let once = filter_small_regions(&l, min_px);
            prop_assert_eq!(filter_small_regions(&once, min_px), once);
        }
    }
}
