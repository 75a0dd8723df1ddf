import { ApiClient } from './api.js';
import { ConsoleApp } from './app.js';
import { baseUrl } from './config.js';

const root = document.getElementById('app');
if (!root) {
  throw new Error('missing #app mount point');
}
new ConsoleApp(root, new ApiClient(baseUrl())).start();
