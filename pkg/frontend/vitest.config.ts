import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'node',
    include: ['tests/**/*.test.ts'],
    // the integration suite trains a tiny checkpoint and boots the
    // real service, so hooks and tests get generous timeouts
    testTimeout: 60000,
    hookTimeout: 120000,
    fileParallelism: false,
  },
});
