from riro_harness import primary

if __name__ == '__main__':
    raise SystemExit(primary.main())
