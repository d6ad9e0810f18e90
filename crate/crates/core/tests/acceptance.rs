// filled in after the library builds
