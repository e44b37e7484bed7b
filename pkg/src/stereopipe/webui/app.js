"use strict";
(() => {
  // src/core.ts
  function snapNumDisparities(value) {
    const snapped = Math.round(value / 16) * 16;
    return Math.max(16, snapped);
  }
  function snapBlockSize(value) {
    const v = Math.max(1, Math.round(value));
    return v % 2 === 0 ? v + 1 : v;
  }
  function clampP2(p1, p2) {
    return p2 > p1 ? p2 : p1 + 1;
  }
  var PARAM_SPECS = {
    min_disparity: { min: -64, max: 64, step: 1 },
    num_disparities: { min: 16, max: 256, step: 16, snap: (v) => snapNumDisparities(v) },
    block_size: { min: 1, max: 21, step: 2, snap: (v) => snapBlockSize(v) },
    p1: { min: 1, max: 500, step: 1, snap: (v) => Math.max(1, Math.round(v)) },
    p2: { min: 2, max: 2e3, step: 1, snap: (v, p) => clampP2(p.p1, Math.round(v)) },
    disp12_max_diff: { min: -1, max: 16, step: 1 },
    uniqueness_ratio: { min: 0, max: 50, step: 1 },
    speckle_window_size: { min: 0, max: 400, step: 10 },
    speckle_range: { min: 1, max: 16, step: 1 },
    num_paths: { min: 4, max: 8, step: 4, snap: (v) => v < 6 ? 4 : 8 }
  };
  var PARAM_NAMES = Object.keys(PARAM_SPECS);
  function snapParam(params, name, value) {
    const spec = PARAM_SPECS[name];
    const clamped = Math.min(spec.max, Math.max(spec.min, value));
    return spec.snap ? spec.snap(clamped, params) : Math.round(clamped);
  }
  function applyFrame(state, frame) {
    if (state.image_b64 !== null && frame.generation < state.generation) return state;
    return { generation: frame.generation, image_b64: frame.image_b64, compute_ms: frame.compute_ms };
  }
  function roiFromDrag(x0, y0, x1, y1, width, height) {
    const cx0 = Math.min(Math.max(Math.min(x0, x1), 0), width - 1);
    const cy0 = Math.min(Math.max(Math.min(y0, y1), 0), height - 1);
    const cx1 = Math.min(Math.max(Math.max(x0, x1), 0), width);
    const cy1 = Math.min(Math.max(Math.max(y0, y1), 0), height);
    const x = Math.floor(cx0);
    const y = Math.floor(cy0);
    const w = Math.max(1, Math.ceil(cx1) - x);
    const h = Math.max(1, Math.ceil(cy1) - y);
    if (x + w > width || y + h > height) {
      return { x, y, w: Math.min(w, width - x), h: Math.min(h, height - y) };
    }
    return { x, y, w, h };
  }
  var ParamStore = class {
    constructor(initial) {
      this.accepted = { ...initial };
      this.pending = { ...initial };
    }
    edit(name, value) {
      this.pending = { ...this.pending, [name]: snapParam(this.pending, name, value) };
      if (name === "p1") {
        this.pending.p2 = clampP2(this.pending.p1, this.pending.p2);
      }
      return this.pending;
    }
    /** Fields that differ from the last server-accepted state. */
    diff() {
      const out = {};
      for (const name of PARAM_NAMES) {
        if (this.pending[name] !== this.accepted[name]) out[name] = this.pending[name];
      }
      return out;
    }
    accept(params) {
      this.accepted = { ...params };
      this.pending = { ...params };
    }
    revert() {
      this.pending = { ...this.accepted };
      return this.pending;
    }
  };
  function debounce(fn, ms) {
    let timer = null;
    return (...args) => {
      if (timer !== null) clearTimeout(timer);
      timer = setTimeout(() => {
        timer = null;
        fn(...args);
      }, ms);
    };
  }
  function formatDistance(distance) {
    if (distance === null || distance === void 0 || !isFinite(distance)) return "n/a";
    return `${distance.toFixed(3)} m`;
  }

  // src/app.ts
  var $ = (id) => document.getElementById(id);
  var session;
  var store;
  var view = { generation: -1, image_b64: null, compute_ms: 0 };
  var roi = null;
  var ws = null;
  function toast(message) {
    const el = $("toast");
    el.textContent = message;
    el.classList.add("visible");
    setTimeout(() => el.classList.remove("visible"), 2500);
  }
  function setBanner(text) {
    const el = $("banner");
    el.textContent = text ?? "";
    el.style.display = text ? "block" : "none";
  }
  function renderControls() {
    const host = $("controls");
    host.innerHTML = "";
    for (const name of PARAM_NAMES) {
      const spec = PARAM_SPECS[name];
      const row = document.createElement("div");
      row.className = "param-row";
      const label = document.createElement("label");
      label.textContent = name;
      label.htmlFor = `param-${name}`;
      const slider = document.createElement("input");
      slider.type = "range";
      slider.id = `param-${name}`;
      slider.min = String(spec.min);
      slider.max = String(spec.max);
      slider.step = String(spec.step);
      const value = document.createElement("input");
      value.type = "number";
      value.id = `value-${name}`;
      value.min = String(spec.min);
      value.max = String(spec.max);
      value.step = String(spec.step);
      const onEdit = (raw) => {
        const num = Number(raw);
        if (!isFinite(num)) return;
        store.edit(name, num);
        syncControls(store.pending);
        schedulePatch();
      };
      slider.addEventListener("input", () => onEdit(slider.value));
      value.addEventListener("change", () => onEdit(value.value));
      row.append(label, slider, value);
      host.append(row);
    }
  }
  function syncControls(params) {
    for (const name of PARAM_NAMES) {
      $(`param-${name}`).value = String(params[name]);
      $(`value-${name}`).value = String(params[name]);
    }
  }
  async function sendPatch() {
    const updates = store.diff();
    if (Object.keys(updates).length === 0) return;
    const res = await fetch(`/api/session/${session.id}/params`, {
      method: "PATCH",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(updates)
    });
    if (res.ok) {
      const body = await res.json();
      store.accept(body.params);
      syncControls(store.accepted);
    } else {
      const body = await res.json().catch(() => ({ detail: res.statusText }));
      syncControls(store.revert());
      toast(`rejected: ${body.detail}`);
    }
  }
  var schedulePatch = debounce(() => void sendPatch(), 100);
  function drawFrame() {
    if (view.image_b64 === null) return;
    const canvas = $("view");
    const ctx = canvas.getContext("2d");
    const img = new Image();
    const generation = view.generation;
    img.onload = () => {
      if (generation < view.generation) return;
      canvas.width = img.width;
      canvas.height = img.height;
      ctx.drawImage(img, 0, 0);
      if (roi) {
        ctx.strokeStyle = "#fff";
        ctx.setLineDash([4, 3]);
        ctx.strokeRect(roi.x + 0.5, roi.y + 0.5, roi.w, roi.h);
      }
      $("overlay").textContent = `generation ${view.generation} \xB7 ${view.compute_ms.toFixed(1)} ms`;
    };
    img.src = `data:image/x-portable-pixmap;base64,${view.image_b64}`;
  }
  function connectStream() {
    const lo = Number($("lo").value);
    const hi = Number($("hi").value);
    const proto = location.protocol === "https:" ? "wss" : "ws";
    ws?.close();
    ws = new WebSocket(
      `${proto}://${location.host}/api/session/${session.id}/stream?lo=${lo}&hi=${hi}`
    );
    ws.onopen = () => setBanner(null);
    ws.onmessage = (ev) => {
      const msg = JSON.parse(ev.data);
      if (msg.type === "frame") {
        const next = applyFrame(view, msg);
        if (next !== view) {
          view = next;
          drawFrame();
        }
      } else if (msg.type === "error") {
        toast(msg.message);
      }
    };
    ws.onclose = () => {
      setBanner("disconnected \u2014 reconnecting\u2026");
      setTimeout(connectStream, 1e3);
    };
  }
  function wireRoiSelection() {
    const canvas = $("view");
    let start2 = null;
    const toImage = (ev) => {
      const rect = canvas.getBoundingClientRect();
      return [
        (ev.clientX - rect.left) / rect.width * canvas.width,
        (ev.clientY - rect.top) / rect.height * canvas.height
      ];
    };
    canvas.addEventListener("mousedown", (ev) => {
      start2 = toImage(ev);
    });
    canvas.addEventListener("mousemove", (ev) => {
      if (!start2) return;
      const [x, y] = toImage(ev);
      roi = roiFromDrag(start2[0], start2[1], x, y, canvas.width, canvas.height);
      drawFrame();
    });
    window.addEventListener("mouseup", (ev) => {
      if (!start2) return;
      const [x, y] = toImage(ev);
      roi = roiFromDrag(start2[0], start2[1], x, y, canvas.width, canvas.height);
      start2 = null;
      drawFrame();
      if (roi) void queryRoi(roi);
    });
  }
  async function queryRoi(r) {
    const res = await fetch(`/api/session/${session.id}/roi`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(r)
    });
    if (!res.ok) {
      toast(`roi query failed: ${res.status}`);
      return;
    }
    const body = await res.json();
    const mean = body.mean_disparity;
    $("roi-mean").textContent = mean === null ? "n/a" : Number(mean).toFixed(2) + " px";
    $("roi-valid").textContent = `${(body.valid_fraction * 100).toFixed(1)} %`;
    $("roi-distance").textContent = session.has_rig ? formatDistance(body.distance_m ?? null) : "n/a";
  }
  async function start() {
    const created = await fetch("/api/session", { method: "POST" });
    session = await created.json();
    const paramsRes = await fetch(`/api/session/${session.id}/params`);
    const doc = await paramsRes.json();
    const initial = Object.fromEntries(
      PARAM_NAMES.map((n) => [n, doc[n]])
    );
    store = new ParamStore(initial);
    renderControls();
    syncControls(initial);
    wireRoiSelection();
    $("lo").addEventListener("change", connectStream);
    $("hi").addEventListener("change", connectStream);
    connectStream();
  }
  void start();
})();
