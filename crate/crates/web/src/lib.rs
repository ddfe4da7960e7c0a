//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string; the page parses it and draws on a
//! canvas. The same computations are available natively through [`demo`].

use wasm_bindgen::prelude::*;

pub mod demo;

/// Bit layout of `value` before and after flipping `bit`.
#[wasm_bindgen]
pub fn flip_bits_demo(value: f32, bit: u32) -> Result<String, JsError> {
    Ok(demo::flip(value, bit)?.to_string())
}

/// Clip-to-zero and clamp responses over `n` points of `[xmin, xmax]`.
#[wasm_bindgen]
pub fn restriction_curve(lower: f32, upper: f32, xmin: f32, xmax: f32, n: usize) -> Result<String, JsError> {
    Ok(demo::restriction_curve(lower, upper, xmin, xmax, n)?.to_string())
}

/// A small transformer detector with profiled bounds, ready to take single
/// neuron faults.
#[wasm_bindgen]
pub struct TraceDemo(demo::Session);

#[wasm_bindgen]
impl TraceDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(model_seed: u32, dataset_seed: u32) -> Result<TraceDemo, JsError> {
        Ok(TraceDemo(demo::Session::new(model_seed.into(), dataset_seed.into())?))
    }

    /// Layer registry as JSON rows.
    pub fn layers(&self) -> String {
        self.0.layers().to_string()
    }

    pub fn images(&self) -> usize {
        self.0.images()
    }

    /// Flips `bit` of output element `element` of `layer_id` on image
    /// `image`, and traces the run unprotected and under `policy`.
    pub fn inject(&self, image: usize, layer_id: usize, element: usize, bit: u32, policy: &str) -> Result<String, JsError> {
        Ok(self.0.inject(image, layer_id, element, bit, policy)?.to_string())
    }
}
