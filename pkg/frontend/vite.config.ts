import { defineConfig } from 'vite';

export default defineConfig({
  server: {
    port: 5173,
    proxy: {
      '/videos': 'http://127.0.0.1:8650',
    },
  },
  test: {
    environment: 'jsdom',
  },
});
