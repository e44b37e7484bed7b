// Browser tuner: one control per matcher parameter, live pseudocolored
// disparity over a websocket, drag-to-select ROI with a distance readout.
// Talks only to the documented HTTP/WS endpoints.

import {
  FrameEvent,
  PARAM_NAMES,
  PARAM_SPECS,
  ParamStore,
  Roi,
  SgmParams,
  ViewState,
  applyFrame,
  debounce,
  formatDistance,
  roiFromDrag,
} from "./core";

interface SessionInfo {
  id: string;
  width: number;
  height: number;
  has_rig: boolean;
}

const $ = (id: string) => document.getElementById(id)!;

let session: SessionInfo;
let store: ParamStore;
let view: ViewState = { generation: -1, image_b64: null, compute_ms: 0 };
let roi: Roi | null = null;
let ws: WebSocket | null = null;

function toast(message: string): void {
  const el = $("toast");
  el.textContent = message;
  el.classList.add("visible");
  setTimeout(() => el.classList.remove("visible"), 2500);
}

function setBanner(text: string | null): void {
  const el = $("banner");
  el.textContent = text ?? "";
  el.style.display = text ? "block" : "none";
}

// -- parameter controls -------------------------------------------------------

function renderControls(): void {
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

    const onEdit = (raw: string) => {
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

function syncControls(params: SgmParams): void {
  for (const name of PARAM_NAMES) {
    ($(`param-${name}`) as HTMLInputElement).value = String(params[name]);
    ($(`value-${name}`) as HTMLInputElement).value = String(params[name]);
  }
}

async function sendPatch(): Promise<void> {
  const updates = store.diff();
  if (Object.keys(updates).length === 0) return;
  const res = await fetch(`/api/session/${session.id}/params`, {
    method: "PATCH",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(updates),
  });
  if (res.ok) {
    const body = await res.json();
    store.accept(body.params as SgmParams);
    syncControls(store.accepted);
  } else {
    const body = await res.json().catch(() => ({ detail: res.statusText }));
    syncControls(store.revert());
    toast(`rejected: ${body.detail}`);
  }
}

const schedulePatch = debounce(() => void sendPatch(), 100);

// -- frame stream -------------------------------------------------------------

function drawFrame(): void {
  if (view.image_b64 === null) return;
  const canvas = $("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const img = new Image();
  const generation = view.generation;
  img.onload = () => {
    if (generation < view.generation) return; // a newer frame landed meanwhile
    canvas.width = img.width;
    canvas.height = img.height;
    ctx.drawImage(img, 0, 0);
    if (roi) {
      ctx.strokeStyle = "#fff";
      ctx.setLineDash([4, 3]);
      ctx.strokeRect(roi.x + 0.5, roi.y + 0.5, roi.w, roi.h);
    }
    $("overlay").textContent =
      `generation ${view.generation} · ${view.compute_ms.toFixed(1)} ms`;
  };
  img.src = `data:image/x-portable-pixmap;base64,${view.image_b64}`;
}

function connectStream(): void {
  const lo = Number(($("lo") as HTMLInputElement).value);
  const hi = Number(($("hi") as HTMLInputElement).value);
  const proto = location.protocol === "https:" ? "wss" : "ws";
  ws?.close();
  ws = new WebSocket(
    `${proto}://${location.host}/api/session/${session.id}/stream?lo=${lo}&hi=${hi}`
  );
  ws.onopen = () => setBanner(null);
  ws.onmessage = (ev) => {
    const msg = JSON.parse(ev.data);
    if (msg.type === "frame") {
      const next = applyFrame(view, msg as FrameEvent);
      if (next !== view) {
        view = next;
        drawFrame();
      }
    } else if (msg.type === "error") {
      toast(msg.message);
    }
  };
  ws.onclose = () => {
    setBanner("disconnected — reconnecting…");
    setTimeout(connectStream, 1000);
  };
}

// -- ROI selection --------------------------------------------------------------

function wireRoiSelection(): void {
  const canvas = $("view") as HTMLCanvasElement;
  let start: [number, number] | null = null;

  const toImage = (ev: MouseEvent): [number, number] => {
    const rect = canvas.getBoundingClientRect();
    return [
      ((ev.clientX - rect.left) / rect.width) * canvas.width,
      ((ev.clientY - rect.top) / rect.height) * canvas.height,
    ];
  };

  canvas.addEventListener("mousedown", (ev) => {
    start = toImage(ev);
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!start) return;
    const [x, y] = toImage(ev);
    roi = roiFromDrag(start[0], start[1], x, y, canvas.width, canvas.height);
    drawFrame();
  });
  window.addEventListener("mouseup", (ev) => {
    if (!start) return;
    const [x, y] = toImage(ev as MouseEvent);
    roi = roiFromDrag(start[0], start[1], x, y, canvas.width, canvas.height);
    start = null;
    drawFrame();
    if (roi) void queryRoi(roi);
  });
}

async function queryRoi(r: Roi): Promise<void> {
  const res = await fetch(`/api/session/${session.id}/roi`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(r),
  });
  if (!res.ok) {
    toast(`roi query failed: ${res.status}`);
    return;
  }
  const body = await res.json();
  const mean = body.mean_disparity;
  $("roi-mean").textContent = mean === null ? "n/a" : Number(mean).toFixed(2) + " px";
  $("roi-valid").textContent = `${(body.valid_fraction * 100).toFixed(1)} %`;
  $("roi-distance").textContent =
    session.has_rig ? formatDistance(body.distance_m ?? null) : "n/a";
}

// -- bootstrap ------------------------------------------------------------------

async function start(): Promise<void> {
  const created = await fetch("/api/session", { method: "POST" });
  session = (await created.json()) as SessionInfo;
  const paramsRes = await fetch(`/api/session/${session.id}/params`);
  const doc = await paramsRes.json();
  const initial = Object.fromEntries(
    PARAM_NAMES.map((n) => [n, doc[n] as number])
  ) as unknown as SgmParams;
  store = new ParamStore(initial);
  renderControls();
  syncControls(initial);
  wireRoiSelection();
  $("lo").addEventListener("change", connectStream);
  $("hi").addEventListener("change", connectStream);
  connectStream();
}

void start();
