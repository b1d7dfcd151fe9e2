/** Browser bootstrap: mount the app on #app.
 *
 * The service base URL comes from the #app element's data-api-base
 * attribute; empty (default) means same origin, which is the normal case
 * when the service itself serves this page's files.
 */

import { ApiClient } from "./api.js";
import { AnnotationApp } from "./app.js";

const rootEl = document.getElementById("app");
if (rootEl === null) {
  throw new Error("missing #app mount point");
}
const baseUrl = rootEl.dataset.apiBase ?? "";
const app = new AnnotationApp(rootEl, new ApiClient(baseUrl));
app.mount();
