//! Relative 6D reference frames organized as a forest. Every frame's pose
//! is stored relative to its parent; frames without a parent hang off the
//! implicit zero frame, addressed by the empty id.

use std::collections::HashMap;
use std::fmt;

use crate::math::{Quat, Vec3};

/// Rigid transform: rotate by `orientation`, then translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6D {
    pub translation: Vec3,
    pub orientation: Quat,
}

impl Pose6D {
    pub const IDENTITY: Pose6D = Pose6D { translation: Vec3::ZERO, orientation: Quat::IDENTITY };

    pub fn new(translation: Vec3, orientation: Quat) -> Pose6D {
        Pose6D { translation, orientation: orientation.normalized() }
    }

    pub fn from_translation(t: Vec3) -> Pose6D {
        Pose6D { translation: t, orientation: Quat::IDENTITY }
    }

    pub fn from_rotation(q: Quat) -> Pose6D {
        Pose6D { translation: Vec3::ZERO, orientation: q.normalized() }
    }

    /// Applies `inner` first, then `self`.
    pub fn compose(&self, inner: &Pose6D) -> Pose6D {
        Pose6D {
            translation: self.translation + self.orientation.rotate(inner.translation),
            orientation: self.orientation.mul(inner.orientation).normalized(),
        }
    }

    /// The pose `x` with `compose(self, x) == identity`.
    pub fn invert(&self) -> Pose6D {
        let q = self.orientation.conjugate();
        Pose6D { translation: -q.rotate(self.translation), orientation: q }
    }

    /// Maps a point from this pose's local coordinates outward.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.orientation.rotate(p) + self.translation
    }
}

#[derive(Debug, Clone)]
pub struct FrameNode {
    pub id: String,
    pub parent: Option<String>,
    pub local: Pose6D,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameError {
    UnknownFrame(String),
    DuplicateFrame(String),
    EmptyFrameId,
    Cycle(String),
}

impl fmt::Display for FrameError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameError::UnknownFrame(id) => write!(f, "unknown frame `{id}`"),
            FrameError::DuplicateFrame(id) => write!(f, "duplicate frame `{id}`"),
            FrameError::EmptyFrameId => write!(f, "frame id must be non-empty"),
            FrameError::Cycle(id) => write!(f, "parent chain of frame `{id}` contains a cycle"),
        }
    }
}

impl std::error::Error for FrameError {}

/// Id of the implicit zero frame; it always exists and is the identity.
pub const ZERO_FRAME: &str = "";

#[derive(Debug, Clone, Default)]
pub struct FrameForest {
    nodes: HashMap<String, FrameNode>,
}

impl FrameForest {
    pub fn new() -> FrameForest {
        FrameForest::default()
    }

    /// Adds a frame. The parent may be named before it is inserted;
    /// [`FrameForest::validate`] checks for dangling parents.
    pub fn insert(
        &mut self,
        id: &str,
        parent: Option<&str>,
        local: Pose6D,
    ) -> Result<(), FrameError> {
        if id.is_empty() {
            return Err(FrameError::EmptyFrameId);
        }
        if self.nodes.contains_key(id) {
            return Err(FrameError::DuplicateFrame(id.to_string()));
        }
        let parent = match parent {
            None | Some(ZERO_FRAME) => None,
            Some(p) => Some(p.to_string()),
        };
        self.nodes.insert(
            id.to_string(),
            FrameNode { id: id.to_string(), parent, local },
        );
        if self.walk_to_root(id).is_err() {
            self.nodes.remove(id);
            return Err(FrameError::Cycle(id.to_string()));
        }
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        id == ZERO_FRAME || self.nodes.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&FrameNode> {
        self.nodes.get(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Frame ids in lexicographic order.
    pub fn ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.nodes.keys().map(|s| s.as_str()).collect();
        ids.sort_unstable();
        ids
    }

    /// Updates the local pose of an existing frame.
    pub fn set_local(&mut self, id: &str, local: Pose6D) -> Result<(), FrameError> {
        match self.nodes.get_mut(id) {
            Some(node) => {
                node.local = local;
                Ok(())
            }
            None => Err(FrameError::UnknownFrame(id.to_string())),
        }
    }

    /// Reparents a frame, rejecting assignments that would close a cycle.
    pub fn set_parent(&mut self, id: &str, parent: Option<&str>) -> Result<(), FrameError> {
        if !self.nodes.contains_key(id) {
            return Err(FrameError::UnknownFrame(id.to_string()));
        }
        let old = self.nodes[id].parent.clone();
        let parent = match parent {
            None | Some(ZERO_FRAME) => None,
            Some(p) => Some(p.to_string()),
        };
        self.nodes.get_mut(id).unwrap().parent = parent;
        if self.walk_to_root(id).is_err() {
            self.nodes.get_mut(id).unwrap().parent = old;
            return Err(FrameError::Cycle(id.to_string()));
        }
        Ok(())
    }

    // chain of nodes from `id` up to a root, child first
    fn walk_to_root<'a>(&'a self, id: &str) -> Result<Vec<&'a FrameNode>, FrameError> {
        let mut chain = Vec::new();
        let mut cursor = id.to_string();
        loop {
            let node = self
                .nodes
                .get(&cursor)
                .ok_or_else(|| FrameError::UnknownFrame(cursor.clone()))?;
            chain.push(node);
            if chain.len() > self.nodes.len() {
                return Err(FrameError::Cycle(id.to_string()));
            }
            match &node.parent {
                Some(p) => cursor = p.clone(),
                None => return Ok(chain),
            }
        }
    }

    /// Absolute pose of a frame: the fold of local poses from its root
    /// down to the frame itself. The zero frame is the identity.
    pub fn absolute(&self, id: &str) -> Result<Pose6D, FrameError> {
        if id == ZERO_FRAME {
            return Ok(Pose6D::IDENTITY);
        }
        let chain = self.walk_to_root(id)?;
        let mut pose = Pose6D::IDENTITY;
        for node in chain.iter().rev() {
            pose = pose.compose(&node.local);
        }
        Ok(pose)
    }

    /// Re-expresses point `p` given in frame `from` in coordinates of
    /// frame `to`. The same-frame case returns `p` bitwise.
    pub fn transform_point(&self, from: &str, to: &str, p: Vec3) -> Result<Vec3, FrameError> {
        if from == to {
            if !self.contains(from) {
                return Err(FrameError::UnknownFrame(from.to_string()));
            }
            return Ok(p);
        }
        let world = self.absolute(from)?.apply(p);
        Ok(self.absolute(to)?.invert().apply(world))
    }

    /// Structural checks: dangling parents and parent-chain cycles.
    pub fn validate(&self) -> Vec<FrameError> {
        let mut errors = Vec::new();
        for id in self.ids() {
            let node = &self.nodes[id];
            if let Some(p) = &node.parent {
                if !self.nodes.contains_key(p) {
                    errors.push(FrameError::UnknownFrame(p.clone()));
                    continue;
                }
            }
            if let Err(e @ FrameError::Cycle(_)) = self.walk_to_root(id) {
                errors.push(e);
            }
        }
        errors
    }
}
