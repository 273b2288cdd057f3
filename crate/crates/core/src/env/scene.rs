use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Coord, EnvError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Obstacle,
}

/// A target object occupying an `extent x extent` square whose top-left
/// cell is `(x, y)`. Object footprints are not walkable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_id: usize,
    pub x: i32,
    pub y: i32,
    pub extent: u32,
}

impl SceneObject {
    pub fn cells(&self) -> impl Iterator<Item = Coord> + '_ {
        let e = self.extent as i32;
        (0..e).flat_map(move |dy| (0..e).map(move |dx| Coord::new(self.x + dx, self.y + dy)))
    }
}

/// Static floorplan. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    scene_id: String,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    objects: Vec<SceneObject>,
    /// Obstacle or object footprint.
    blocked: Vec<bool>,
    /// Object index per cell, if any.
    occupant: Vec<Option<usize>>,
}

/// On-disk scene schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub grid: Vec<String>,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    /// Builds and validates a scene. `num_classes` is the class vocabulary size.
    pub fn new(
        scene_id: impl Into<String>,
        width: usize,
        height: usize,
        cells: Vec<Cell>,
        objects: Vec<SceneObject>,
        num_classes: usize,
    ) -> Result<Self, EnvError> {
        let scene_id = scene_id.into();
        let bad = |msg: String| EnvError::MalformedScene(format!("{scene_id}: {msg}"));
        if width == 0 || height == 0 {
            return Err(bad(format!("bad grid dimensions {width}x{height}")));
        }
        if cells.len() != width * height {
            return Err(bad(format!(
                "grid has {} cells, expected {}",
                cells.len(),
                width * height
            )));
        }
        let mut blocked: Vec<bool> = cells.iter().map(|c| *c == Cell::Obstacle).collect();
        let mut occupant = vec![None; width * height];
        for (i, obj) in objects.iter().enumerate() {
            if obj.class_id >= num_classes {
                return Err(bad(format!(
                    "unknown class id {} (vocabulary size {num_classes})",
                    obj.class_id
                )));
            }
            if obj.extent == 0 {
                return Err(bad(format!("object {i} has zero extent")));
            }
            for c in obj.cells() {
                if c.x < 0 || c.y < 0 || c.x as usize >= width || c.y as usize >= height {
                    return Err(bad(format!("object {i} cell ({}, {}) out of bounds", c.x, c.y)));
                }
                let idx = c.y as usize * width + c.x as usize;
                if cells[idx] == Cell::Obstacle {
                    return Err(bad(format!("object {i} overlaps an obstacle at ({}, {})", c.x, c.y)));
                }
                if occupant[idx].is_some() {
                    return Err(bad(format!("object {i} overlaps another object")));
                }
                occupant[idx] = Some(i);
                blocked[idx] = true;
            }
        }
        if blocked.iter().all(|b| *b) {
            return Err(bad("no walkable cell".into()));
        }
        Ok(Self {
            scene_id,
            width,
            height,
            cells,
            objects,
            blocked,
            occupant,
        })
    }

    pub fn from_file(file: SceneFile, num_classes: usize) -> Result<Self, EnvError> {
        if file.grid.len() != file.height {
            return Err(EnvError::MalformedScene(format!(
                "{}: grid has {} rows, height is {}",
                file.scene_id,
                file.grid.len(),
                file.height
            )));
        }
        let mut cells = Vec::with_capacity(file.width * file.height);
        for (y, row) in file.grid.iter().enumerate() {
            if row.chars().count() != file.width {
                return Err(EnvError::MalformedScene(format!(
                    "{}: row {y} has length {}, width is {}",
                    file.scene_id,
                    row.chars().count(),
                    file.width
                )));
            }
            for ch in row.chars() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Obstacle,
                    other => {
                        return Err(EnvError::MalformedScene(format!(
                            "{}: unknown grid symbol {other:?} in row {y}",
                            file.scene_id
                        )))
                    }
                });
            }
        }
        Scene::new(
            file.scene_id,
            file.width,
            file.height,
            cells,
            file.objects,
            num_classes,
        )
    }

    pub fn to_file(&self) -> SceneFile {
        let grid = (0..self.height)
            .map(|y| {
                (0..self.width)
                    .map(|x| match self.cells[y * self.width + x] {
                        Cell::Free => '.',
                        Cell::Obstacle => '#',
                    })
                    .collect()
            })
            .collect();
        SceneFile {
            scene_id: self.scene_id.clone(),
            width: self.width,
            height: self.height,
            grid,
            objects: self.objects.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    /// Family name used when grouping statistics: the scene id up to the first `_`.
    pub fn family(&self) -> &str {
        self.scene_id.split('_').next().unwrap_or(&self.scene_id)
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn index(&self, c: Coord) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell(&self, c: Coord) -> Option<Cell> {
        self.in_bounds(c).then(|| self.cells[self.index(c)])
    }

    /// In bounds, not an obstacle and not covered by an object.
    pub fn is_walkable(&self, c: Coord) -> bool {
        self.in_bounds(c) && !self.blocked[self.index(c)]
    }

    pub fn is_blocked(&self, c: Coord) -> bool {
        !self.is_walkable(c)
    }

    /// Index of the object covering `c`, if any.
    pub fn occupant(&self, c: Coord) -> Option<usize> {
        if self.in_bounds(c) {
            self.occupant[self.index(c)]
        } else {
            None
        }
    }

    pub fn walkable_cells(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.height as i32)
            .flat_map(move |y| (0..self.width as i32).map(move |x| Coord::new(x, y)))
            .filter(|c| self.is_walkable(*c))
    }

    pub fn instances(&self, class_id: usize) -> impl Iterator<Item = (usize, &SceneObject)> {
        self.objects
            .iter()
            .enumerate()
            .filter(move |(_, o)| o.class_id == class_id)
    }

    pub fn has_class(&self, class_id: usize) -> bool {
        self.instances(class_id).next().is_some()
    }

    /// Sorted distinct classes present.
    pub fn classes(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.objects.iter().map(|o| o.class_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn load_scene(path: &Path, num_classes: usize) -> Result<Scene, EnvError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| EnvError::MalformedScene(format!("{}: {e}", path.display())))?;
    Scene::from_file(file, num_classes)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), EnvError> {
    std::fs::write(path, scene.to_json())
        .map_err(|e| EnvError::Io(format!("{}: {e}", path.display())))
}

/// Loads every `*.json` scene in a directory, sorted by file name.
pub fn load_scene_dir(dir: &Path, num_classes: usize) -> Result<Vec<Scene>, EnvError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| EnvError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scene(p, num_classes)).collect()
}
