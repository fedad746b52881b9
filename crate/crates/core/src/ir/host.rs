use std::collections::BTreeMap;

use thiserror::Error;

use super::{Type, Value};

/// Handle naming a host-registered array. Never owns storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrayRef(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Int(Vec<i64>),
    Float(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::Int(v) => v.len(),
            ArrayData::Float(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn array_type(&self) -> Type {
        match self {
            ArrayData::Int(_) => Type::IntArray,
            ArrayData::Float(_) => Type::FloatArray,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostArray {
    pub name: String,
    pub data: ArrayData,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HostError {
    #[error("host state `{0}` is already registered")]
    Duplicate(String),
    #[error("no host state named `{0}`")]
    Unknown(String),
    #[error("host state `{name}` has type {actual}, expected {expected}")]
    Type {
        name: String,
        expected: Type,
        actual: Type,
    },
}

/// State owned by the fixed code: named arrays and scalars that handler
/// modules reference through `extern` declarations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HostState {
    arrays: Vec<HostArray>,
    array_names: BTreeMap<String, ArrayRef>,
    scalars: Vec<(String, Value)>,
    scalar_names: BTreeMap<String, usize>,
}

impl HostState {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_free(&self, name: &str) -> Result<(), HostError> {
        if self.array_names.contains_key(name) || self.scalar_names.contains_key(name) {
            return Err(HostError::Duplicate(name.to_string()));
        }
        Ok(())
    }

    pub fn add_array(&mut self, name: &str, data: ArrayData) -> Result<ArrayRef, HostError> {
        self.check_free(name)?;
        let r = ArrayRef(self.arrays.len() as u32);
        self.arrays.push(HostArray {
            name: name.to_string(),
            data,
        });
        self.array_names.insert(name.to_string(), r);
        Ok(r)
    }

    pub fn add_int_array(&mut self, name: &str, data: Vec<i64>) -> Result<ArrayRef, HostError> {
        self.add_array(name, ArrayData::Int(data))
    }

    pub fn add_float_array(&mut self, name: &str, data: Vec<f64>) -> Result<ArrayRef, HostError> {
        self.add_array(name, ArrayData::Float(data))
    }

    pub fn add_scalar(&mut self, name: &str, value: Value) -> Result<(), HostError> {
        self.check_free(name)?;
        if matches!(value, Value::Array(_)) {
            return Err(HostError::Type {
                name: name.to_string(),
                expected: Type::Int,
                actual: Type::IntArray,
            });
        }
        self.scalar_names
            .insert(name.to_string(), self.scalars.len());
        self.scalars.push((name.to_string(), value));
        Ok(())
    }

    pub fn array_ref(&self, name: &str) -> Option<ArrayRef> {
        self.array_names.get(name).copied()
    }

    pub fn array(&self, r: ArrayRef) -> Option<&HostArray> {
        self.arrays.get(r.0 as usize)
    }

    pub fn array_mut(&mut self, r: ArrayRef) -> Option<&mut HostArray> {
        self.arrays.get_mut(r.0 as usize)
    }

    pub fn array_by_name(&self, name: &str) -> Option<&ArrayData> {
        self.array_ref(name)
            .and_then(|r| self.array(r))
            .map(|a| &a.data)
    }

    pub fn array_by_name_mut(&mut self, name: &str) -> Option<&mut ArrayData> {
        let r = self.array_ref(name)?;
        self.array_mut(r).map(|a| &mut a.data)
    }

    pub fn int_array(&self, name: &str) -> Option<&[i64]> {
        match self.array_by_name(name)? {
            ArrayData::Int(v) => Some(v),
            ArrayData::Float(_) => None,
        }
    }

    pub fn int_array_mut(&mut self, name: &str) -> Option<&mut Vec<i64>> {
        match self.array_by_name_mut(name)? {
            ArrayData::Int(v) => Some(v),
            ArrayData::Float(_) => None,
        }
    }

    pub(crate) fn scalar_index(&self, name: &str) -> Option<usize> {
        self.scalar_names.get(name).copied()
    }

    pub fn scalar(&self, name: &str) -> Option<Value> {
        self.scalar_index(name).map(|i| self.scalars[i].1)
    }

    pub fn set_scalar(&mut self, name: &str, value: Value) -> Result<(), HostError> {
        let i = self
            .scalar_index(name)
            .ok_or_else(|| HostError::Unknown(name.to_string()))?;
        self.scalars[i].1 = value;
        Ok(())
    }

    pub(crate) fn scalar_at(&self, i: usize) -> Value {
        self.scalars[i].1
    }

    pub(crate) fn set_scalar_at(&mut self, i: usize, v: Value) {
        self.scalars[i].1 = v;
    }

    pub fn array_names(&self) -> impl Iterator<Item = &str> {
        self.array_names.keys().map(String::as_str)
    }
}
