import { BrowseCompose } from './browse.js';
import { CaptureConsole } from './capture_console.js';
import { GatewayClient } from './client.js';
import { DevicePanel } from './device_panel.js';
import { fmtMs } from './format.js';
import { PlanView } from './plan_view.js';

const app = document.getElementById('app')!;

const header = document.createElement('header');
const urlInput = document.createElement('input');
urlInput.type = 'text';
urlInput.value = 'ws://127.0.0.1:8000/ws';
urlInput.className = 'url';
const connectBtn = document.createElement('button');
connectBtn.textContent = 'Connect';
const dot = document.createElement('span');
dot.className = 'dot';
const phaseLabel = document.createElement('span');
phaseLabel.className = 'phase';
const info = document.createElement('span');
info.className = 'info';
header.append(urlInput, connectBtn, dot, phaseLabel, info);
app.appendChild(header);

const grid = document.createElement('main');
grid.className = 'grid';
app.appendChild(grid);

const client = new GatewayClient();
const panels = [
  new PlanView(grid, client),
  new DevicePanel(grid),
  new CaptureConsole(grid, client),
  new BrowseCompose(grid, client),
];

client.onStatus((connected) => {
  dot.className = `dot ${connected ? 'ok' : 'warn'}`;
});

client.onState((state) => {
  const s = state.sections;
  phaseLabel.textContent = s.phase;
  const swarm = s.membership.swarm_id;
  info.textContent =
    `t=${fmtMs(s.time.time_ms, 0)} · members [${s.membership.members.join(', ')}]` +
    (swarm === null ? '' : ` · swarm ${swarm}`);
  for (const p of panels) p.render(state);
});

connectBtn.addEventListener('click', () => client.connect(urlInput.value));
client.connect(urlInput.value);
