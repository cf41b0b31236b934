use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Objects annotated in one image: `(class, bounding-box area in px²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub objects: Vec<(usize, f64)>,
}

impl AnnotationRecord {
    pub fn new(objects: Vec<(usize, f64)>) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::Input("annotation record has no objects".into()));
        }
        if let Some((_, a)) = objects.iter().find(|(_, a)| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::Input(format!("object area must be positive, got {a}")));
        }
        Ok(Self { objects })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dominant {
    Label(usize),
    Discard,
}

/// Single-label reduction of a multi-object image. Areas are summed per
/// class; the largest class wins if it covers at least twice the area of the
/// runner-up, otherwise the image is discarded.
pub fn dominant_object_label(record: &AnnotationRecord) -> Dominant {
    let mut areas: Vec<(usize, f64)> = Vec::new();
    for &(class, area) in &record.objects {
        match areas.iter_mut().find(|(c, _)| *c == class) {
            Some(slot) => slot.1 += area,
            None => areas.push((class, area)),
        }
    }
    if areas.len() == 1 {
        return Dominant::Label(areas[0].0);
    }
    // Descending area, ascending class on ties, so the result does not depend
    // on object order.
    areas.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if areas[0].1 >= 2.0 * areas[1].1 {
        Dominant::Label(areas[0].0)
    } else {
        Dominant::Discard
    }
}
