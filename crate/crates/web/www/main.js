import init, * as dc from "./pkg/diffchain_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showError(e) {
  $("error").textContent = e ? String(e) : "";
}

function drawCurve() {
  const canvas = $("curve");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const values = dc.guidance_curve($("mode").value, num("s0"), num("alpha"), num("steps"));
  const max = Math.max(...values, 1e-9);
  const pad = 20;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, canvas.width - 2 * pad, canvas.height - 2 * pad);
  ctx.strokeStyle = "#1f5fbf";
  ctx.lineWidth = 2;
  ctx.beginPath();
  values.forEach((v, i) => {
    const x = pad + (i / (values.length - 1 || 1)) * (canvas.width - 2 * pad);
    const y = canvas.height - pad - (v / max) * (canvas.height - 2 * pad);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  $("curve-ends").textContent =
    `step 0: ${values[0].toFixed(6)}, step ${values.length - 1}: ${values[values.length - 1].toFixed(6)}`;
}

function blit(canvas, gray) {
  const n = dc.image_size();
  const small = new ImageData(new Uint8ClampedArray(dc.gray_to_rgba(gray)), n, n);
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(small, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
}

function drawProfiles(radial, angular) {
  const canvas = $("profiles");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const bars = (values, color, x0, width) => {
    const max = Math.max(...values, 1e-12);
    const w = width / values.length;
    ctx.fillStyle = color;
    values.forEach((v, i) => {
      const h = (v / max) * (canvas.height - 10);
      ctx.fillRect(x0 + i * w + 1, canvas.height - h, w - 2, h);
    });
  };
  bars(radial, "#1f5fbf", 0, canvas.width / 2 - 5);
  bars(angular, "#e07b00", canvas.width / 2 + 5, canvas.width / 2 - 5);
}

function drawGlyph() {
  const pixels = dc.render_glyph_pixels(
    num("shape"), num("stroke"), num("fill"), BigInt(num("jitter")), num("noise"), 7n,
  );
  blit($("glyph"), pixels);
  blit($("spectrum"), dc.log_spectrum(pixels));
  drawProfiles(Array.from(dc.radial_density(pixels)), Array.from(dc.angular_density(pixels)));
}

function guarded(f) {
  return () => {
    try {
      f();
      showError(null);
    } catch (e) {
      showError(e);
    }
  };
}

await init();
dc.shape_names().forEach((name, i) => {
  const opt = document.createElement("option");
  opt.value = i;
  opt.textContent = name;
  $("shape").appendChild(opt);
});
for (const id of ["mode", "s0", "alpha", "steps"]) $(id).addEventListener("input", guarded(drawCurve));
for (const id of ["shape", "stroke", "fill", "jitter", "noise"]) $(id).addEventListener("input", guarded(drawGlyph));
guarded(drawCurve)();
guarded(drawGlyph)();
