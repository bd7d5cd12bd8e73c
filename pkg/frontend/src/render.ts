// Raster rendering for pair images. Nearest-neighbor upscaling only: the
// analyst judges outline aliasing, so any smoothing would distort exactly
// the thing being inspected. Every canvas pixel maps 1:1 to one source value.

export const SOURCE_SIDE = 28;
export const SCALE = 7; // 28 * 7 = 196, the minimum mandated display size

// Advisory thresholds mirroring the reviewer checklist; hints only.
export const SIGNAL_HINTS = {
  bboxDeltaMaxPx: 10,
  outlineAgreementMin: 0.9,
  toneDeltaMax: 25,
};

export function grayscaleToRgba(
  pixels: number[],
  scale: number = SCALE,
): Uint8ClampedArray<ArrayBuffer> {
  if (pixels.length !== SOURCE_SIDE * SOURCE_SIDE) {
    throw new Error(`expected ${SOURCE_SIDE * SOURCE_SIDE} pixels, got ${pixels.length}`);
  }
  const side = SOURCE_SIDE * scale;
  const out = new Uint8ClampedArray(new ArrayBuffer(side * side * 4));
  for (let y = 0; y < side; y++) {
    const srcRow = Math.floor(y / scale);
    for (let x = 0; x < side; x++) {
      const v = pixels[srcRow * SOURCE_SIDE + Math.floor(x / scale)];
      const o = (y * side + x) * 4;
      out[o] = v;
      out[o + 1] = v;
      out[o + 2] = v;
      out[o + 3] = 255;
    }
  }
  return out;
}

export function paintImage(canvas: HTMLCanvasElement, pixels: number[], scale: number = SCALE): void {
  const side = SOURCE_SIDE * scale;
  canvas.width = side;
  canvas.height = side;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.putImageData(new ImageData(grayscaleToRgba(pixels, scale), side, side), 0, 0);
}

export type SignalVerdicts = {
  bbox: boolean;
  outline: boolean;
  tone: boolean;
};

export function signalHints(s: {
  bbox_delta_px: number;
  outline_agreement: number;
  tone_delta: number;
}): SignalVerdicts {
  return {
    bbox: s.bbox_delta_px <= SIGNAL_HINTS.bboxDeltaMaxPx,
    outline: s.outline_agreement >= SIGNAL_HINTS.outlineAgreementMin,
    tone: s.tone_delta <= SIGNAL_HINTS.toneDeltaMax,
  };
}
